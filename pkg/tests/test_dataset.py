import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gconvdbd.dataset import (
    DataError,
    FrameTable,
    LabelRule,
    LabeledWindow,
    NormalizationStats,
    SensorFrame,
    SUBSETS,
    aggregate_labels,
    denormalize,
    fit_normalizer,
    get_subset,
    label_frames,
    load_csv,
    make_windows,
    max_safe_accel,
    normalize,
    prepare_dataset,
    read_windows,
    resolve_channel,
    split_dataset,
    write_windows,
)

RULE = LabelRule()


def frames_from_speeds(speeds, extra=None, tag="A"):
    out = []
    for t, v in enumerate(speeds):
        values = {"Vehicle speed": float(v)}
        if extra:
            values.update({k: float(f(t)) for k, f in extra.items()})
        out.append(SensorFrame(t, values, tag))
    return out


# ------------------------------------------------------------------ CSV


def test_load_small_csv(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("speed,rpm,Class\n10,800,A\n11,820,A\n12,850,B\n")
    table = load_csv(p)
    assert len(table) == 3
    assert table.channels == ("speed", "rpm")
    assert table[0] == SensorFrame(0, {"speed": 10.0, "rpm": 800.0}, "A")
    assert [f.driver_tag for f in table] == ["A", "A", "B"]


def test_load_csv_time_column_is_metadata(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("speed,Time(s),Class\n10,5,A\n11,6,A\n")
    table = load_csv(p)
    assert table.channels == ("speed",)
    assert table.timestamps.tolist() == [5, 6]


def test_load_csv_reports_row_and_column(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("speed,rpm,Class\n10,800,A\nfast,820,A\n")
    with pytest.raises(DataError) as err:
        load_csv(p)
    assert err.value.row == 3 and err.value.column == "speed"
    assert "row 3" in str(err.value) and "speed" in str(err.value)


def test_load_csv_errors(tmp_path):
    with pytest.raises(DataError, match="no such file"):
        load_csv(tmp_path / "missing.csv")
    p = tmp_path / "d.csv"
    p.write_text("speed,rpm,Class\n10,800\n")
    with pytest.raises(DataError, match="expected 3 columns") as err:
        load_csv(p)
    assert err.value.row == 2
    with pytest.raises(DataError, match="not present"):
        p.write_text("speed,rpm,Class\n10,800,A\n")
        load_csv(p, expected_schema=["speed", "brake"])


def test_load_synthetic_recording(recording_csv, recording):
    table = load_csv(recording_csv, expected_schema=SUBSETS["C"].channels)
    assert len(table) == len(recording)
    assert table.channels == recording.channels
    np.testing.assert_array_equal(table.values, recording.values)


def test_subset_definitions(recording):
    a, b, c = (SUBSETS[k] for k in "ABC")
    assert (len(a.channels), len(b.channels), len(c.channels)) == (4, 6, 30)
    assert set(a.channels) < set(b.channels)
    for s in (a, b, c):
        assert len(set(s.resolve(recording.channels))) == len(s.channels)
    assert get_subset("full", recording.channels).channels == recording.channels
    with pytest.raises(ValueError):
        get_subset("Z")


def test_resolve_channel_spellings():
    header = ["Vehicle_speed", "Calculated_LOAD_value", "Engine_Idel_Target_Speed"]
    assert resolve_channel("Vehicle-speed", header) == "Vehicle_speed"
    assert resolve_channel("Engine load", header) == "Calculated_LOAD_value"
    assert resolve_channel("Engine idle target speed'", header) == "Engine_Idel_Target_Speed"


# ------------------------------------------------------------- labelling


@pytest.mark.parametrize(
    "speed, expected",
    [
        (0.0, 9.81 * 0.569),  # 5.58189
        (100.0, 9.81 * (0.198 - 0.592 + 0.569)),  # 1.71675
        (50.0, 9.81 * 0.3225),  # 3.163725
    ],
)
def test_max_safe_accel_worked_values(speed, expected):
    assert max_safe_accel(RULE, speed) == pytest.approx(expected, abs=1e-9)


def test_max_safe_accel_frozen_numbers():
    assert max_safe_accel(RULE, 0) == pytest.approx(5.58189, abs=1e-9)
    assert max_safe_accel(RULE, 100) == pytest.approx(1.71675, abs=1e-9)
    assert max_safe_accel(RULE, 50) == pytest.approx(3.163725, abs=1e-9)


def test_max_safe_accel_rejects_negative_speed():
    with pytest.raises(ValueError):
        max_safe_accel(RULE, -1.0)


def test_max_safe_accel_decreasing_to_100kmh():
    vals = max_safe_accel(RULE, np.arange(0, 101, 1.0))
    assert np.all(np.diff(vals) < 0)


def test_constant_speed_is_safe():
    assert label_frames(frames_from_speeds([60] * 5)).tolist() == [0] * 5


def test_hard_launch_is_unsafe():
    # 0 -> 36 km/h in one second is 10 m/s^2, above the bound at V=0 (5.58)
    # and at V=36 (9.81 * 0.3815408 = 3.743)
    labels = label_frames(frames_from_speeds([0, 36, 36, 36]))
    assert labels.tolist() == [1, 1, 0, 0]  # first frame copies the second


def test_label_threshold_boundary():
    # at V=0 the bound is 5.58189 m/s^2 = 20.0948 km/h per second
    below = label_frames(frames_from_speeds([20.0, 0.0, 0.0]))
    assert below.tolist() == [0, 0, 0]
    above = label_frames(frames_from_speeds([20.2, 0.0, 0.0]))
    assert above.tolist() == [1, 1, 0]


def test_labels_ignore_extra_channels():
    speeds = [0, 10, 30, 31, 60, 20, 20]
    base = label_frames(frames_from_speeds(speeds))
    more = label_frames(frames_from_speeds(speeds, {"rpm": lambda t: 900 + 7 * t, "x": math.sin}))
    assert base.tolist() == more.tolist()


def test_labels_restart_at_trip_boundary():
    frames = frames_from_speeds([50, 50, 50], tag="A") + frames_from_speeds([0, 0, 0], tag="B")
    # without the boundary 50 -> 0 would read as hard braking
    assert label_frames(frames).tolist() == [0] * 6


def test_label_requires_speed_channel():
    frames = [SensorFrame(t, {"rpm": 800.0}) for t in range(3)]
    with pytest.raises(DataError):
        label_frames(frames)


# ---------------------------------------------------------- normalisation


def test_fit_normalizer():
    table = FrameTable(
        ("a", "b", "c"),
        np.array([[2.0, 5.0, 1.0], [4.0, 5.0, -1.0], [6.0, 5.0, 0.0]]),
        np.arange(3), ("A",) * 3, (None,) * 3,
    )
    stats = fit_normalizer(table)
    assert stats.min.tolist() == [2, 5, -1]
    assert stats.max.tolist() == [6, 5, 1]
    assert stats.constant.tolist() == [False, True, False]
    with pytest.raises(DataError):
        fit_normalizer([])


@pytest.mark.parametrize("x, expected", [(4.0, 0.5), (2.0, 0.0), (6.0, 1.0), (8.0, 1.0), (0.0, 0.0)])
def test_normalize_values(x, expected):
    stats = NormalizationStats(("a",), np.array([2.0]), np.array([6.0]))
    assert normalize(SensorFrame(0, {"a": x}), stats)[0] == expected


def test_normalize_constant_channel_and_mismatch():
    stats = NormalizationStats(("a", "b"), np.array([5.0, 0.0]), np.array([5.0, 1.0]))
    assert normalize(SensorFrame(0, {"a": 5.0, "b": 0.5}), stats).tolist() == [0.0, 0.5]
    with pytest.raises(DataError, match="mismatch"):
        normalize(SensorFrame(0, {"a": 5.0}), stats)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_normalize_roundtrip(seed):
    rng = np.random.default_rng(seed)
    lo = rng.uniform(-100, 100, 4)
    hi = lo + rng.uniform(0.1, 50, 4)
    stats = NormalizationStats(tuple("abcd"), lo, hi)
    x = lo + rng.uniform(0, 1, (7, 4)) * (hi - lo)
    back = denormalize(normalize(FrameTable(
        tuple("abcd"), x, np.arange(7), ("A",) * 7, (None,) * 7), stats, clamp=False), stats)
    np.testing.assert_allclose(back, x, rtol=1e-9)


# -------------------------------------------------------------- windowing


def test_window_starts_example():
    data = np.arange(20.0)[:, None]
    ws = make_windows(data, np.zeros(20), 10, 0.5)
    assert [w.start for w in ws] == [0, 5, 10]
    assert all(w.data.shape == (10, 1) for w in ws)


def test_window_label_rules():
    labels = np.zeros(10)
    assert make_windows(np.zeros((10, 1)), labels, 10, 0.5)[0].label == 0
    labels[3] = 1
    assert make_windows(np.zeros((10, 1)), labels, 10, 0.5)[0].label == 1
    assert make_windows(np.zeros((10, 1)), labels, 10, 0.5, aggregation="majority")[0].label == 0


def test_window_errors():
    with pytest.raises(DataError):
        make_windows(np.zeros((5, 1)), np.zeros(5), 10, 0.5)
    with pytest.raises(ValueError):
        make_windows(np.zeros((20, 1)), np.zeros(20), 10, 1.0)


def test_windows_do_not_cross_segments():
    data = np.arange(30.0)[:, None]
    ws = make_windows(data, np.zeros(30), 10, 0.5, segments=[(0, 12), (12, 30)])
    for w in ws:
        lo, hi = (0, 12) if w.start < 12 else (12, 30)
        assert lo <= w.start and w.start + 10 <= hi


def test_horizon_windows_take_label_from_next_window():
    labels = np.zeros(30)
    labels[15] = 1
    ws = make_windows(np.zeros((30, 1)), labels, 10, 0.5, horizon=True)
    # horizons are [10, 20), [15, 25), [20, 30)
    assert [(w.start, w.label) for w in ws] == [(0, 1), (5, 1), (10, 0)]


@settings(max_examples=100, deadline=None)
@given(T=st.integers(1, 12), overlap=st.sampled_from([0.0, 0.25, 0.5, 0.75, 0.9]), extra=st.integers(0, 60))
def test_window_count_formula(T, overlap, extra):
    F = T + extra
    stride = max(1, int(math.floor(T * (1 - overlap) + 0.5)))
    ws = make_windows(np.zeros((F, 2)), np.zeros(F), T, overlap)
    assert len(ws) == math.ceil((F - T) / stride) + 1
    assert all(w.data.shape == (T, 2) for w in ws)
    assert ws[-1].start + T == F  # the tail is always covered


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=10, max_size=10))
def test_removing_unsafe_frames_clears_window(bits):
    labels = np.array(bits)
    if aggregate_labels(labels) == 1:
        assert aggregate_labels(np.zeros_like(labels)) == 0
    assert aggregate_labels(labels, "majority") <= aggregate_labels(labels, "any")


# -------------------------------------------------------------- splitting


def _windows(n, labels=None):
    labels = labels if labels is not None else [k % 2 for k in range(n)]
    return [LabeledWindow(np.full((2, 1), k, dtype=float), labels[k], k) for k in range(n)]


def test_split_sizes_and_determinism():
    ws = _windows(100)
    train, test = split_dataset(ws, 0.8, seed=7)
    assert (len(train), len(test)) == (80, 20)
    again = split_dataset(ws, 0.8, seed=7)
    assert [w.window_id for w in train] == [w.window_id for w in again[0]]
    assert {w.split for w in train} == {"train"} and {w.split for w in test} == {"test"}


def test_split_partition_property():
    ws = _windows(57)
    train, test = split_dataset(ws, 0.7, seed=1)
    ids_tr = {w.window_id for w in train}
    ids_te = {w.window_id for w in test}
    assert ids_tr | ids_te == set(range(57)) and not ids_tr & ids_te


def test_split_rounding_edge():
    ws = _windows(10)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        train, test = split_dataset(ws, 0.999, seed=0)
    assert (len(train), len(test)) == (9, 1)


def test_split_keeps_both_classes_when_possible():
    labels = [0] * 18 + [1] * 2
    for seed in range(20):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            train, test = split_dataset(_windows(20, labels), 0.8, seed)
        assert {w.label for w in train} == {0, 1}
        assert {w.label for w in test} == {0, 1}


def test_split_errors():
    with pytest.raises(DataError):
        split_dataset([], 0.8, 0)
    with pytest.raises(ValueError):
        split_dataset(_windows(4), 1.0, 0)


def test_split_by_trip_keeps_trips_together():
    ws = [LabeledWindow(np.zeros((2, 1)), k % 2, k, trip=f"t{k // 5}") for k in range(40)]
    train, test = split_dataset(ws, 0.75, 3, by_trip=True)
    assert not {w.trip for w in train} & {w.trip for w in test}


def test_window_file_roundtrip(tmp_path):
    ws = split_dataset(_windows(6), 0.5, 0)[0]
    write_windows(tmp_path / "w.jsonl", ws)
    back = read_windows(tmp_path / "w.jsonl")
    assert [(w.window_id, w.split, w.label) for w in back] == [(w.window_id, w.split, w.label) for w in ws]
    for a, b in zip(ws, back):
        np.testing.assert_array_equal(a.data, b.data)


def test_prepare_dataset_fits_scaler_on_training_rows(recording):
    data = prepare_dataset(recording, SUBSETS["A"], seed=4)
    train_rows = np.concatenate([w.data for w in data.train])
    assert train_rows.min() >= 0 and train_rows.max() <= 1
    assert np.isclose(train_rows.min(axis=0), 0).all() and np.isclose(train_rows.max(axis=0), 1).all()
    assert data.train_rows.shape[1] == 4
    assert len(data.train) + len(data.test) > 0
    assert data.frame_labels.shape == (len(recording),)
