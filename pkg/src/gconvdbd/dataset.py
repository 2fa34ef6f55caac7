"""CSV ingestion, safe/unsafe relabelling, min-max scaling and windowing.

Frames are held column-wise in a :class:`FrameTable` (one float matrix plus
per-row metadata) so a full OCSLab recording fits comfortably in memory; the
table still behaves as a sequence of :class:`SensorFrame` records.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import re
import warnings
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

KMH_TO_MS = 1.0 / 3.6

TIME_KEYS = frozenset({"time", "times", "timestamp", "timesec", "timeseconds"})
TRIP_KEYS = frozenset({"pathorder", "trip", "tripid"})


class DataError(ValueError):
    """Raised for unreadable or malformed sensor data."""

    def __init__(self, message: str, *, row: int | None = None, column: str | None = None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


def channel_key(name: str) -> str:
    """Canonical form used to match channel names across spellings."""
    return re.sub(r"[^0-9a-z]", "", name.lower())


# Table-1 names that appear under a different spelling in the OCSLab header.
CHANNEL_ALIASES: dict[str, tuple[str, ...]] = {
    "engineload": ("calculatedloadvalue",),
    "throttleposition": ("absolutethrottleposition", "throttlepositionsignal"),
    "brakepedalpressure": ("mastercylinderpressure",),
    "engineidletargetspeed": ("engineideltargetspeed",),
}


def resolve_channel(name: str, available: Sequence[str]) -> str:
    """Return the entry of ``available`` that ``name`` refers to."""
    by_key = {channel_key(a): a for a in available}
    key = channel_key(name)
    for candidate in (key, *CHANNEL_ALIASES.get(key, ())):
        if candidate in by_key:
            return by_key[candidate]
    raise DataError(f"channel {name!r} not present in data")


@dataclass(frozen=True)
class SensorFrame:
    timestamp: int
    values: dict[str, float]
    driver_tag: str = ""
    trip: str | None = None


@dataclass(frozen=True)
class FrameTable(Sequence):
    """Column-oriented block of frames sharing one channel list."""

    channels: tuple[str, ...]
    values: np.ndarray  # (F, n) float64
    timestamps: np.ndarray  # (F,) int64
    driver_tags: tuple[str, ...]
    trips: tuple[str | None, ...]

    def __post_init__(self) -> None:
        f = len(self.timestamps)
        if self.values.shape != (f, len(self.channels)):
            raise DataError(
                f"value matrix shape {self.values.shape} does not match "
                f"{f} frames x {len(self.channels)} channels"
            )
        if len(self.driver_tags) != f or len(self.trips) != f:
            raise DataError("metadata length does not match frame count")

    def __len__(self) -> int:
        return len(self.timestamps)

    def __getitem__(self, i):
        if isinstance(i, slice):
            idx = range(len(self))[i]
            return FrameTable(
                self.channels,
                self.values[i],
                self.timestamps[i],
                tuple(self.driver_tags[j] for j in idx),
                tuple(self.trips[j] for j in idx),
            )
        row = self.values[i]
        return SensorFrame(
            int(self.timestamps[i]),
            dict(zip(self.channels, map(float, row))),
            self.driver_tags[i],
            self.trips[i],
        )

    @classmethod
    def from_frames(cls, frames: Iterable[SensorFrame]) -> FrameTable:
        frames = list(frames)
        if not frames:
            raise DataError("no frames")
        channels = tuple(frames[0].values)
        for k, fr in enumerate(frames):
            if tuple(fr.values) != channels:
                raise DataError("frames do not share one channel set", row=k)
        return cls(
            channels,
            np.array([[fr.values[c] for c in channels] for fr in frames], dtype=float),
            np.array([fr.timestamp for fr in frames], dtype=np.int64),
            tuple(fr.driver_tag for fr in frames),
            tuple(fr.trip for fr in frames),
        )

    def take(self, rows: Sequence[int]) -> FrameTable:
        rows = np.asarray(rows, dtype=np.intp)
        return FrameTable(
            self.channels,
            self.values[rows],
            self.timestamps[rows],
            tuple(self.driver_tags[j] for j in rows),
            tuple(self.trips[j] for j in rows),
        )

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.channels.index(resolve_channel(name, self.channels))]

    def select(self, channels: Sequence[str]) -> FrameTable:
        """Restrict to ``channels`` (resolved by name), keeping their given order."""
        cols = [self.channels.index(resolve_channel(c, self.channels)) for c in channels]
        return replace(
            self,
            channels=tuple(self.channels[c] for c in cols),
            values=self.values[:, cols],
        )

    def segments(self) -> list[tuple[int, int]]:
        """Half-open ``(start, stop)`` row ranges of uninterrupted trips.

        A new trip starts whenever the driver tag or trip id changes or the
        timestamp does not advance by exactly one second.
        """
        f = len(self)
        if f == 0:
            return []
        cuts = [0]
        for t in range(1, f):
            if (
                self.driver_tags[t] != self.driver_tags[t - 1]
                or self.trips[t] != self.trips[t - 1]
                or self.timestamps[t] != self.timestamps[t - 1] + 1
            ):
                cuts.append(t)
        cuts.append(f)
        return list(zip(cuts[:-1], cuts[1:]))


def _as_table(frames: FrameTable | Iterable[SensorFrame]) -> FrameTable:
    return frames if isinstance(frames, FrameTable) else FrameTable.from_frames(frames)


def load_csv(path: str | Path, expected_schema: Sequence[str] | None = None) -> FrameTable:
    """Parse an OCSLab-style CSV.

    The first row is the header and the last column holds the driver class
    letter. A ``Time(s)``-like column supplies timestamps and a ``PathOrder``
    column the trip id; both are metadata rather than channels. Without a
    time column, timestamps count seconds from the start of each driver run.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        if len(header) < 2:
            raise DataError("header needs at least one channel and the class column", row=1)
        tag_col = len(header) - 1
        time_col = trip_col = None
        for j, name in enumerate(header[:-1]):
            key = channel_key(name)
            if key in TIME_KEYS and time_col is None:
                time_col = j
            elif key in TRIP_KEYS and trip_col is None:
                trip_col = j
        chan_cols = [j for j in range(tag_col) if j not in (time_col, trip_col)]
        channels = tuple(header[j] for j in chan_cols)
        if not channels:
            raise DataError("no sensor channels in header", row=1)
        if expected_schema is not None:
            for name in expected_schema:
                resolve_channel(name, channels)

        rows: list[list[float]] = []
        stamps: list[int] = []
        tags: list[str] = []
        trips: list[str | None] = []
        for rowno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(
                    f"expected {len(header)} columns, found {len(row)}", row=rowno
                )
            vals = []
            for j in chan_cols:
                try:
                    vals.append(float(row[j]))
                except ValueError:
                    raise DataError(
                        f"non-numeric value {row[j]!r}", row=rowno, column=header[j]
                    ) from None
            rows.append(vals)
            tags.append(row[tag_col].strip())
            trips.append(row[trip_col].strip() if trip_col is not None else None)
            if time_col is not None:
                try:
                    stamps.append(int(round(float(row[time_col]))))
                except ValueError:
                    raise DataError(
                        f"non-numeric timestamp {row[time_col]!r}", row=rowno,
                        column=header[time_col],
                    ) from None
    if not rows:
        raise DataError(f"{path} has a header but no records")
    if time_col is None:
        stamps = []
        for k in range(len(rows)):
            same_run = k > 0 and tags[k] == tags[k - 1] and trips[k] == trips[k - 1]
            stamps.append(stamps[-1] + 1 if same_run else 0)
    return FrameTable(
        channels,
        np.asarray(rows, dtype=float),
        np.asarray(stamps, dtype=np.int64),
        tuple(tags),
        tuple(trips),
    )


# ---------------------------------------------------------------- labelling


@dataclass(frozen=True)
class LabelRule:
    """Speed-dependent bound on tolerated acceleration magnitude."""

    g: float = 9.81
    c2: float = 0.198
    c1: float = -0.592
    c0: float = 0.569


def max_safe_accel(rule: LabelRule, speed_kmh):
    """Largest tolerated |acceleration| in m/s^2 at ``speed_kmh``.

    Accepts a scalar or an array of speeds.
    """
    v = np.asarray(speed_kmh, dtype=float)
    if np.any(v < 0) or np.any(np.isnan(v)):
        raise ValueError("speed must be non-negative")
    r = v / 100.0
    out = rule.g * (rule.c2 * r * r + rule.c1 * r + rule.c0)
    return float(out) if out.ndim == 0 else out


def label_frames(
    frames: FrameTable | Iterable[SensorFrame],
    rule: LabelRule = LabelRule(),
    speed_channel: str = "Vehicle speed",
) -> np.ndarray:
    """Per-frame labels: 1 (unsafe) where |a_t| exceeds the bound at V_t.

    ``a_t`` is the speed change over the one-second step ending at ``t``,
    converted from km/h to m/s. The first frame of every trip has no such
    step and copies the label of the second.
    """
    table = _as_table(frames)
    if len(table) < 2:
        raise DataError("labelling needs at least two frames")
    speed = table.column(speed_channel)
    labels = np.zeros(len(table), dtype=np.int8)
    for start, stop in table.segments():
        if stop - start < 2:
            log.warning("single-frame trip at row %d labelled safe", start)
            continue
        v = np.clip(speed[start:stop], 0.0, None)
        accel = np.abs(np.diff(v)) * KMH_TO_MS
        unsafe = accel > max_safe_accel(rule, v[1:])
        labels[start + 1 : stop] = unsafe
        labels[start] = labels[start + 1]
    return labels


# ------------------------------------------------------------ normalisation


@dataclass(frozen=True)
class FeatureSubset:
    name: str
    channels: tuple[str, ...]

    def resolve(self, available: Sequence[str]) -> tuple[str, ...]:
        return tuple(resolve_channel(c, available) for c in self.channels)

    @classmethod
    def full(cls, available: Sequence[str]) -> FeatureSubset:
        return cls("full", tuple(available))


_SUBSET_A = ("Vehicle speed", "Engine speed", "Engine load", "Throttle position")

SUBSETS: dict[str, FeatureSubset] = {
    "A": FeatureSubset("A", _SUBSET_A),
    "B": FeatureSubset("B", _SUBSET_A + ("Steering wheel angle", "Brake pedal pressure")),
    "C": FeatureSubset(
        "C",
        (
            "Fuel consumption",
            "Accelerator pedal value",
            "Throttle-position-signal",
            "Short term fuel trim bank1",
            "Intake-air-pressure",
            "Absolute throttle position",
            "Engine speed",
            "Engine torque after correction",
            "Torque of friction",
            "Flywheel torque (after torque interventions)",
            "Current spark timing",
            "Engine coolant temperature",
            "Engine idle target speed",
            "Engine torque",
            "Calculated load value",
            "Flywheel torque",
            "Torque converter speed",
            "Engine coolant temperature.1",
            "Wheel velocity front left-hand",
            "Wheel velocity rear right-hand",
            "Wheel velocity front right-hand",
            "Wheel velocity rear left-hand",
            "Torque converter turbine speed -Unfiltered",
            "Vehicle-speed",
            "Acceleration speed-longitudinal",
            "Master cylinder pressure",
            "Calculated road gradient",
            "Acceleration speed-Lateral",
            "Steering wheel speed",
            "Steering wheel angle",
        ),
    ),
}


def get_subset(name: str, available: Sequence[str] | None = None) -> FeatureSubset:
    """Built-in subset by name; ``full`` needs the available channel list."""
    if name == "full":
        if available is None:
            raise ValueError("subset 'full' needs the data's channel list")
        return FeatureSubset.full(available)
    try:
        return SUBSETS[name.upper()]
    except KeyError:
        raise ValueError(f"unknown subset {name!r}; choose A, B, C or full") from None


@dataclass(frozen=True)
class NormalizationStats:
    channels: tuple[str, ...]
    min: np.ndarray
    max: np.ndarray

    @property
    def constant(self) -> np.ndarray:
        return self.max == self.min

    def to_dict(self) -> dict:
        return {
            "channels": list(self.channels),
            "min": self.min.tolist(),
            "max": self.max.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> NormalizationStats:
        lo = np.asarray(d["min"], dtype=float)
        hi = np.asarray(d["max"], dtype=float)
        if np.any(hi < lo):
            raise DataError("normaliser has max < min")
        return cls(tuple(d["channels"]), lo, hi)


def fit_normalizer(
    frames: FrameTable | Iterable[SensorFrame], subset: FeatureSubset | None = None
) -> NormalizationStats:
    """Per-channel min/max over ``frames`` (pass the training split only)."""
    if not isinstance(frames, FrameTable):
        frames = list(frames)
        if not frames:
            raise DataError("cannot fit a normaliser on zero frames")
    table = _as_table(frames)
    if len(table) == 0:
        raise DataError("cannot fit a normaliser on zero frames")
    if subset is not None:
        table = table.select(subset.channels)
    lo = table.values.min(axis=0)
    hi = table.values.max(axis=0)
    stats = NormalizationStats(table.channels, lo, hi)
    for name in np.asarray(table.channels)[stats.constant]:
        log.warning("channel %r is constant over the training frames; it scales to 0", name)
    return stats


def normalize_matrix(values: np.ndarray, stats: NormalizationStats, clamp: bool = True) -> np.ndarray:
    span = stats.max - stats.min
    safe = np.where(span > 0, span, 1.0)
    out = np.where(span > 0, (values - stats.min) / safe, 0.0)
    if clamp:
        outside = (out < 0) | (out > 1)
        if np.any(outside):
            log.debug("clamped %d values outside the training range", int(outside.sum()))
        out = np.clip(out, 0.0, 1.0)
    return out


def normalize(frame: SensorFrame | FrameTable, stats: NormalizationStats, clamp: bool = True) -> np.ndarray:
    """Min-max scale one frame (vector result) or a table (matrix result)."""
    if isinstance(frame, FrameTable):
        try:
            values = frame.select(stats.channels).values
        except DataError as exc:
            raise DataError(f"channel mismatch: {exc}") from None
        return normalize_matrix(values, stats, clamp)
    try:
        keys = {channel_key(k): v for k, v in frame.values.items()}
        vec = np.array([keys[channel_key(c)] for c in stats.channels], dtype=float)
    except KeyError as exc:
        raise DataError(f"channel mismatch: frame lacks {exc.args[0]!r}") from None
    return normalize_matrix(vec, stats, clamp)


def denormalize(values: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    return stats.min + np.asarray(values, dtype=float) * (stats.max - stats.min)


# ---------------------------------------------------------------- windowing


@dataclass(frozen=True)
class LabeledWindow:
    data: np.ndarray  # (T, n)
    label: int
    window_id: int
    split: str | None = None
    trip: str | None = None
    start: int = 0


def stride_for(window_len: int, overlap_fraction: float) -> int:
    if window_len < 1:
        raise ValueError("window length must be >= 1")
    if not 0 <= overlap_fraction < 1:
        raise ValueError("overlap fraction must lie in [0, 1)")
    return max(1, int(math.floor(window_len * (1.0 - overlap_fraction) + 0.5)))


def window_starts(n_frames: int, span: int, stride: int) -> list[int]:
    """Stride-spaced starts, plus one end-aligned start if the tail is uncovered."""
    if n_frames < span:
        return []
    starts = list(range(0, n_frames - span + 1, stride))
    if starts[-1] + span < n_frames:
        starts.append(n_frames - span)
    return starts


def aggregate_labels(labels: np.ndarray, rule: str = "any") -> int:
    if rule == "any":
        return int(np.any(labels))
    if rule == "majority":
        return int(2 * int(np.sum(labels)) > len(labels))
    raise ValueError(f"unknown aggregation rule {rule!r}")


def make_windows(
    data: np.ndarray,
    labels: np.ndarray,
    window_len: int = 10,
    overlap_fraction: float = 0.5,
    *,
    segments: Sequence[tuple[int, int]] | None = None,
    trips: Sequence[str | None] | None = None,
    aggregation: str = "any",
    horizon: bool = False,
) -> list[LabeledWindow]:
    """Cut overlapping fixed-length windows inside each trip segment.

    With ``horizon=False`` a window is labelled from its own frames. With
    ``horizon=True`` the input rows are ``[s, s+T)`` and the label comes from
    the following ``[s+T, s+2T)``, so each pair spans ``2T`` frames.
    """
    data = np.asarray(data, dtype=float)
    labels = np.asarray(labels)
    if data.ndim != 2 or len(data) != len(labels):
        raise DataError("data must be F x n with one label per frame")
    stride = stride_for(window_len, overlap_fraction)
    span = 2 * window_len if horizon else window_len
    if segments is None:
        segments = [(0, len(data))]
    if len(data) < window_len:
        raise DataError(f"{len(data)} frames is fewer than the window length {window_len}")

    out: list[LabeledWindow] = []
    for seg_no, (lo, hi) in enumerate(segments):
        trip = trips[seg_no] if trips is not None else str(seg_no)
        for s in window_starts(hi - lo, span, stride):
            a = lo + s
            lab_lo = a + window_len if horizon else a
            label = aggregate_labels(labels[lab_lo : lab_lo + window_len], aggregation)
            out.append(
                LabeledWindow(data[a : a + window_len].copy(), label, len(out), trip=trip, start=a)
            )
    if not out:
        raise DataError(f"no trip segment holds {span} consecutive frames")
    return out


def table_windows(
    table: FrameTable,
    labels: np.ndarray,
    window_len: int = 10,
    overlap_fraction: float = 0.5,
    *,
    aggregation: str = "any",
    horizon: bool = False,
) -> list[LabeledWindow]:
    """Window a table's raw values trip by trip, tagging each window with its trip."""
    segs = table.segments()
    trips = [f"{table.driver_tags[a]}/{table.trips[a]}/{table.timestamps[a]}" for a, _ in segs]
    return make_windows(
        table.values,
        labels,
        window_len,
        overlap_fraction,
        segments=segs,
        trips=trips,
        aggregation=aggregation,
        horizon=horizon,
    )


def split_dataset(
    windows: Sequence[LabeledWindow],
    train_fraction: float = 0.8,
    seed: int = 0,
    *,
    by_trip: bool = False,
) -> tuple[list[LabeledWindow], list[LabeledWindow]]:
    """Seeded shuffle then split; tries to keep both classes on both sides."""
    if not windows:
        raise DataError("cannot split an empty window set")
    if not 0 < train_fraction < 1:
        raise ValueError("train fraction must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    n = len(windows)

    if by_trip:
        groups: dict[str | None, list[int]] = {}
        for k, w in enumerate(windows):
            groups.setdefault(w.trip, []).append(k)
        keys = list(groups)
        order = [keys[k] for k in rng.permutation(len(keys))]
        target = train_fraction * n
        train_idx: list[int] = []
        test_idx: list[int] = []
        for key in order:
            (train_idx if len(train_idx) < target else test_idx).extend(groups[key])
    else:
        perm = rng.permutation(n).tolist()
        n_train = int(math.floor(n * train_fraction + 1e-9))
        if n >= 2:
            n_train = min(max(n_train, 1), n - 1)
        train_idx, test_idx = perm[:n_train], perm[n_train:]
        _ensure_both_classes(windows, train_idx, test_idx)

    train = [replace(windows[k], split="train") for k in train_idx]
    test = [replace(windows[k], split="test") for k in test_idx]
    return train, test


def _ensure_both_classes(windows, train_idx: list[int], test_idx: list[int]) -> None:
    classes = {w.label for w in windows}
    if len(classes) < 2:
        return
    for side, other in ((test_idx, train_idx), (train_idx, test_idx)):
        present = {windows[k].label for k in side}
        for c in classes - present:
            donors = [j for j, k in enumerate(other) if windows[k].label == c]
            takers = [j for j, k in enumerate(side) if windows[k].label != c]
            other_has = sum(1 for k in other if windows[k].label == c)
            side_needs = {windows[side[j]].label for j in takers}
            if not donors or other_has < 2 or not takers:
                warnings.warn(f"split leaves class {c} absent from one side", stacklevel=3)
                continue
            # swap the last donor with a taker whose class stays represented
            for j in reversed(takers):
                lab = windows[side[j]].label
                if sum(1 for k in side if windows[k].label == lab) >= 2 or lab not in side_needs:
                    d = donors[-1]
                    side[j], other[d] = other[d], side[j]
                    warnings.warn(
                        f"split swapped one window so class {c} appears on both sides",
                        stacklevel=3,
                    )
                    break
            else:
                warnings.warn(f"split leaves class {c} absent from one side", stacklevel=3)


# ------------------------------------------------------------ serialisation


def write_windows(path: str | Path, windows: Iterable[LabeledWindow]) -> None:
    """JSON-lines container: one window per line, matrix row-major."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for w in windows:
            rec = {
                "window_id": w.window_id,
                "split": w.split,
                "label": int(w.label),
                "trip": w.trip,
                "start": w.start,
                "shape": list(w.data.shape),
                "data": w.data.ravel().tolist(),
            }
            fh.write(json.dumps(rec) + "\n")


def read_windows(path: str | Path) -> list[LabeledWindow]:
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                data = np.asarray(rec["data"], dtype=float).reshape(rec["shape"])
                out.append(
                    LabeledWindow(
                        data, int(rec["label"]), int(rec["window_id"]), rec.get("split"),
                        rec.get("trip"), int(rec.get("start", 0)),
                    )
                )
            except (KeyError, ValueError, TypeError) as exc:
                raise DataError(f"bad window record: {exc}", row=lineno) from None
    return out


@dataclass
class PreparedData:
    """Everything the trainer needs, derived from one recording."""

    subset: FeatureSubset
    channels: tuple[str, ...]
    stats: NormalizationStats
    train: list[LabeledWindow]
    test: list[LabeledWindow]
    frame_labels: np.ndarray = field(repr=False)
    train_rows: np.ndarray = field(repr=False)  # raw training frames, for the graph


def prepare_dataset(
    table: FrameTable,
    subset: FeatureSubset,
    *,
    window_len: int = 10,
    overlap_fraction: float = 0.5,
    train_fraction: float = 0.8,
    seed: int = 0,
    aggregation: str = "any",
    horizon: bool = True,
    by_trip: bool = False,
    rule: LabelRule = LabelRule(),
    speed_channel: str = "Vehicle speed",
) -> PreparedData:
    """Label, window, split, then fit the scaler on training rows only.

    Windows are cut from raw values first so the split is known before any
    statistic is computed; min/max come from the frames covered by training
    windows and are then applied to both splits.
    """
    labels = label_frames(table, rule, speed_channel)
    sub = table.select(subset.channels)
    raw = table_windows(
        sub, labels, window_len, overlap_fraction, aggregation=aggregation, horizon=horizon
    )
    train_raw, test_raw = split_dataset(raw, train_fraction, seed, by_trip=by_trip)
    covered = np.zeros(len(sub), dtype=bool)
    for w in train_raw:
        covered[w.start : w.start + window_len] = True
    train_rows = sub.values[covered]
    stats = fit_normalizer(sub.take(np.flatnonzero(covered)))
    train = [replace(w, data=normalize_matrix(w.data, stats)) for w in train_raw]
    test = [replace(w, data=normalize_matrix(w.data, stats)) for w in test_raw]
    return PreparedData(subset, sub.channels, stats, train, test, labels, train_rows)
