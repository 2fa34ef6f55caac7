"""Synthetic OCSLab-shaped recordings for tests and demos.

The real dataset is not redistributed. This generator produces a CSV with the
same layout (channels, ``Time(s)``, class letter last) and physically coupled
channels: a speed profile with occasional hard manoeuvres drives engine speed,
load, throttle, wheel speeds, brake pressure and the accelerometers.

    python -m gconvdbd.synthetic out.csv --frames 3000 --seed 0
"""

from __future__ import annotations

import argparse
import csv
from pathlib import Path

import numpy as np

from .dataset import FrameTable

CHANNELS = (
    "Fuel_consumption",
    "Accelerator_Pedal_value",
    "Throttle_position_signal",
    "Short_Term_Fuel_Trim_Bank1",
    "Intake_air_pressure",
    "Absolute_throttle_position",
    "Engine_speed",
    "Engine_torque_after_correction",
    "Torque_of_friction",
    "Flywheel_torque_(after_torque_interventions)",
    "Current_spark_timing",
    "Engine_coolant_temperature",
    "Engine_Idel_Target_Speed",
    "Engine_torque",
    "Calculated_LOAD_value",
    "Flywheel_torque",
    "Torque_converter_speed",
    "Engine_coolant_temperature.1",
    "Wheel_velocity_front_left-hand",
    "Wheel_velocity_rear_right-hand",
    "Wheel_velocity_front_right-hand",
    "Wheel_velocity_rear_left-hand",
    "Torque_converter_turbine_speed_-_Unfiltered",
    "Vehicle_speed",
    "Acceleration_speed_-_Longitudinal",
    "Master_cylinder_pressure",
    "Calculated_road_gradient",
    "Acceleration_speed_-_Lateral",
    "Steering_wheel_speed",
    "Steering_wheel_angle",
)


def _speed_profile(n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Speed (km/h) and the acceleration (m/s^2) that produced it."""
    v = np.empty(n)
    a = np.empty(n)
    v[0] = rng.uniform(0, 40)
    a[0] = 0.0
    target = rng.uniform(20, 100)
    burst = 0
    burst_a = 0.0
    for t in range(1, n):
        if rng.random() < 0.02:
            target = rng.uniform(0, 110)
        if burst == 0 and rng.random() < 0.03:
            burst = int(rng.integers(2, 6))
            burst_a = rng.choice([-1.0, 1.0]) * rng.uniform(2.5, 7.0)
        if burst > 0:
            acc = burst_a
            burst -= 1
        else:
            acc = np.clip(0.08 * (target - v[t - 1]) / 3.6 + rng.normal(0, 0.3), -2.0, 2.0)
        v[t] = np.clip(v[t - 1] + 3.6 * acc, 0.0, 130.0)
        a[t] = (v[t] - v[t - 1]) / 3.6
    return v, a


def synthetic_recording(
    n_frames: int = 3000,
    seed: int = 0,
    drivers: str = "ABCDEFGHIJ",
    trips_per_driver: int = 1,
) -> FrameTable:
    """Recording split evenly over ``drivers`` x ``trips_per_driver`` trips."""
    rng = np.random.default_rng(seed)
    n_trips = len(drivers) * trips_per_driver
    sizes = np.full(n_trips, n_frames // n_trips)
    sizes[: n_frames % n_trips] += 1
    blocks, stamps, tags, trips = [], [], [], []
    k = 0
    for d in drivers:
        for trip in range(trips_per_driver):
            m = int(sizes[k])
            k += 1
            if m == 0:
                continue
            blocks.append(_channels(*_speed_profile(m, rng), rng))
            stamps.extend(range(m))
            tags.extend([d] * m)
            trips.extend([None] * m)
    return FrameTable(
        CHANNELS, np.concatenate(blocks), np.asarray(stamps, dtype=np.int64), tuple(tags), tuple(trips)
    )


def _channels(v: np.ndarray, a: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    m = len(v)

    def noise(s):
        return rng.normal(0, s, m)

    gear_ratio = np.select([v < 20, v < 40, v < 60, v < 80], [120, 70, 48, 36], 29)
    rpm = np.clip(750 + v * gear_ratio / 3.0 + noise(40), 650, 6500)
    throttle = np.clip(12 + 6 * np.maximum(a, 0) + 0.25 * v + noise(1.5), 0, 100)
    pedal = np.clip(throttle * 0.9 + noise(1.0), 0, 100)
    load = np.clip(20 + 8 * np.maximum(a, 0) + 0.3 * v + noise(2), 0, 100)
    torque = np.clip(30 + 25 * np.maximum(a, 0) + 0.6 * v + noise(5), -40, 400)
    brake = np.clip(np.where(a < -0.5, -a * 12.0, 0.0) + noise(0.3), 0, 120)
    steer = np.cumsum(noise(3.0)) * 0.2
    steer = steer - np.linspace(0, 1, m) * steer[-1]
    wheel = v[:, None] + rng.normal(0, 0.4, (m, 4))
    coolant = np.clip(80 + np.linspace(0, 12, m) + noise(0.5), 60, 110)
    cols = [
        np.clip(0.5 + 0.02 * v + 0.6 * np.maximum(a, 0) + noise(0.1), 0, None),  # fuel
        pedal,
        throttle,
        noise(2.0),  # short-term fuel trim
        np.clip(35 + 0.4 * load + noise(2), 10, 110),
        throttle * 1.05 + noise(0.5),
        rpm,
        torque * 0.97 + noise(2),
        12 + 0.002 * rpm + noise(0.5),
        torque * 0.9 + noise(3),
        np.clip(10 + 0.003 * rpm - 0.1 * load + noise(1), -10, 50),
        coolant,
        np.full(m, 750.0),
        torque + noise(2),
        load,
        torque * 0.9 + noise(3),
        rpm * 0.98 + noise(20),
        coolant + noise(0.2),
        wheel[:, 0],
        wheel[:, 1],
        wheel[:, 2],
        wheel[:, 3],
        rpm * 0.96 + noise(25),
        v,
        a + noise(0.05),
        brake,
        noise(0.8),
        steer * 0.01 * np.maximum(v, 1) / 30 + noise(0.05),
        np.abs(np.diff(steer, prepend=steer[0])) * 10 + noise(0.5),
        steer,
    ]
    return np.column_stack(cols)


def write_csv(table: FrameTable, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([*table.channels, "Time(s)", "Class"])
        for row, ts, tag in zip(table.values, table.timestamps, table.driver_tags):
            w.writerow([*(repr(float(x)) for x in row), int(ts), tag])


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description="write a synthetic OCSLab-style CSV")
    ap.add_argument("out")
    ap.add_argument("--frames", type=int, default=3000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    write_csv(synthetic_recording(args.frames, args.seed), args.out)


if __name__ == "__main__":
    main()
