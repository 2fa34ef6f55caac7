"""Confusion-matrix metrics, ROC/AUC and the end-to-end experiment driver."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataset import (
    LabelRule,
    get_subset,
    label_frames,
    load_csv,
    normalize_matrix,
    prepare_dataset,
    split_dataset,
    table_windows,
)
from .graph import build_graph
from .nn import Checkpoint, GConvLSTMClassifier, ModelConfig, predict_proba, train
from .nn.train import stack_windows

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def confusion(predictions, truths) -> ConfusionMatrix:
    """Counts with unsafe (1) as the positive class."""
    p = np.asarray(predictions).astype(int).ravel()
    t = np.asarray(truths).astype(int).ravel()
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {t.shape}")
    if len(p) == 0:
        raise ValueError("confusion matrix of zero samples")
    return ConfusionMatrix(
        tp=int(np.sum((p == 1) & (t == 1))),
        tn=int(np.sum((p == 0) & (t == 0))),
        fp=int(np.sum((p == 1) & (t == 0))),
        fn=int(np.sum((p == 0) & (t == 1))),
    )


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    degenerate: tuple[str, ...] = ()

    def as_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "degenerate": list(self.degenerate),
        }


def metrics(cm: ConfusionMatrix) -> Metrics:
    """Accuracy, precision, recall and F1; empty denominators give 0 and a flag."""
    if cm.total <= 0:
        raise ValueError("metrics of an empty confusion matrix")
    flags = []
    accuracy = (cm.tp + cm.tn) / cm.total
    if cm.tp + cm.fp == 0:
        precision = 0.0
        flags.append("precision")
    else:
        precision = cm.tp / (cm.tp + cm.fp)
    if cm.tp + cm.fn == 0:
        recall = 0.0
        flags.append("recall")
    else:
        recall = cm.tp / (cm.tp + cm.fn)
    if precision + recall == 0:
        f1 = 0.0
        flags.append("f1")
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return Metrics(accuracy, precision, recall, f1, tuple(flags))


@dataclass(frozen=True)
class RocCurve:
    thresholds: np.ndarray  # descending; first entry is +inf
    tpr: np.ndarray
    fpr: np.ndarray
    auc: float

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["threshold", "fpr", "tpr"])
            for thr, f, t in zip(self.thresholds, self.fpr, self.tpr):
                w.writerow([repr(float(thr)), repr(float(f)), repr(float(t))])


def roc_auc(probabilities, truths) -> RocCurve:
    """ROC swept over the distinct scores; tied scores move TPR and FPR together."""
    s = np.asarray(probabilities, dtype=float).ravel()
    y = np.asarray(truths).astype(int).ravel()
    if s.shape != y.shape:
        raise ValueError(f"length mismatch: {s.shape} vs {y.shape}")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both classes among the truths")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    # last index of each run of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tps = np.cumsum(y)[ends]
    fps = (ends + 1) - tps
    tpr = np.r_[0.0, tps / n_pos]
    fpr = np.r_[0.0, fps / n_neg]
    thresholds = np.r_[np.inf, s[ends]]
    auc = float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(thresholds, tpr, fpr, auc)


# ----------------------------------------------------------- experiments

# GConvLSTM rows of the published comparison tables, in percent.
PUBLISHED_REFERENCE: dict[str, dict[str, float]] = {
    "A": {"accuracy": 97.5, "precision": 97.6, "recall": 97.5, "f1": 97.5},
    "B": {"accuracy": 97.5, "precision": 99.6, "recall": 95.8, "f1": 97.6},
    "C": {"accuracy": 98.7, "precision": 98.6, "recall": 98.6, "f1": 98.6},
}
# Baselines quoted for comparison only; not reimplemented.
BASELINE_REFERENCE: dict[str, dict[str, dict[str, float]]] = {
    "A": {
        "SVM": {"accuracy": 82.5, "precision": 82.1, "recall": 76.3, "f1": 79.1},
        "NN": {"accuracy": 84.1, "precision": 82.9, "recall": 78.2, "f1": 80.5},
    },
    "B": {
        "SVM": {"accuracy": 90.2, "precision": 89.4, "recall": 87.7, "f1": 88.5},
        "NN": {"accuracy": 91.7, "precision": 90.8, "recall": 89.1, "f1": 89.9},
    },
}
REFERENCE_TOLERANCE_PP = 1.5
REFERENCE_UNSAFE_FRACTION = 0.31
CLASS_BALANCE_TOLERANCE = 0.03


@dataclass
class ExperimentReport:
    subset: str
    config: dict
    metrics: Metrics
    confusion: ConfusionMatrix
    auc: float
    loss_trace: list[float]
    unsafe_frame_fraction: float
    n_train: int
    n_test: int
    runtime_s: float
    roc: RocCurve | None = field(default=None, repr=False)

    def published_reference(self) -> dict[str, float] | None:
        return PUBLISHED_REFERENCE.get(self.subset.upper())

    def deltas(self) -> dict[str, float]:
        ref = self.published_reference()
        if ref is None:
            return {}
        got = self.metrics.as_dict()
        return {k: 100.0 * got[k] - v for k, v in ref.items()}

    def within_tolerance(self) -> dict[str, bool]:
        return {k: abs(d) <= REFERENCE_TOLERANCE_PP for k, d in self.deltas().items()}

    def to_dict(self) -> dict:
        return {
            "subset": self.subset,
            "config": self.config,
            "metrics": self.metrics.as_dict(),
            "confusion": asdict(self.confusion),
            "auc": self.auc,
            "loss_trace": self.loss_trace,
            "unsafe_frame_fraction": self.unsafe_frame_fraction,
            "n_train": self.n_train,
            "n_test": self.n_test,
            "runtime_s": self.runtime_s,
            "published_reference": self.published_reference(),
            "tolerance_pp": REFERENCE_TOLERANCE_PP,
            "deltas": self.deltas(),
        }

    def table(self) -> str:
        ref = self.published_reference() or {}
        got = self.metrics.as_dict()
        lines = [
            f"subset {self.subset}  train={self.n_train}  test={self.n_test}  "
            f"unsafe frames={100 * self.unsafe_frame_fraction:.1f}%  AUC={self.auc:.4f}",
            f"{'metric':<10} {'ours':>8} {'published':>10} {'delta':>8}",
        ]
        for k in ("accuracy", "precision", "recall", "f1"):
            ours = 100.0 * got[k]
            if k in ref:
                lines.append(f"{k:<10} {ours:>7.2f}% {ref[k]:>9.1f}% {ours - ref[k]:>+8.2f}")
            else:
                lines.append(f"{k:<10} {ours:>7.2f}% {'-':>10} {'-':>8}")
        return "\n".join(lines)


def evaluate_windows(model: GConvLSTMClassifier, graph, windows, threshold: float | None = None):
    x, y = stack_windows(windows)
    probs = predict_proba(model, graph, x)
    thr = model.config.threshold if threshold is None else threshold
    cm = confusion((probs >= thr).astype(int), y)
    roc = roc_auc(probs, y) if len(np.unique(y)) == 2 else None
    return cm, metrics(cm), roc, probs


def run_experiment(
    dataset_path: str | Path,
    subset: str,
    config: ModelConfig | None = None,
    *,
    rule: LabelRule = LabelRule(),
    speed_channel: str = "Vehicle speed",
) -> tuple[ExperimentReport, Checkpoint]:
    """Label, split, scale, build the graph, train and score one subset."""
    config = config or ModelConfig()
    t0 = time.perf_counter()
    table = load_csv(dataset_path)
    sub = get_subset(subset, table.channels)
    data = prepare_dataset(
        table,
        sub,
        window_len=config.window,
        overlap_fraction=config.overlap,
        train_fraction=config.train_fraction,
        seed=config.seed,
        aggregation=config.aggregation,
        horizon=config.label_mode == "horizon",
        by_trip=config.split_by_trip,
        rule=rule,
        speed_channel=speed_channel,
    )
    graph = build_graph(data.train_rows, data.channels)
    log.info("subset %s: %d channels, %d train / %d test windows",
             sub.name, len(data.channels), len(data.train), len(data.test))
    result = train(None, graph, data.train, config)
    cm, met, roc, _ = evaluate_windows(result.model, graph, data.test)
    report = ExperimentReport(
        subset=sub.name,
        config=config.to_dict(),
        metrics=met,
        confusion=cm,
        auc=roc.auc if roc else float("nan"),
        loss_trace=result.loss_trace,
        unsafe_frame_fraction=float(np.mean(data.frame_labels)),
        n_train=len(data.train),
        n_test=len(data.test),
        runtime_s=time.perf_counter() - t0,
        roc=roc,
    )
    ckpt = Checkpoint(
        result.model, graph, data.stats, sub.name,
        meta={"dataset": str(dataset_path), "split_seed": config.seed},
    )
    return report, ckpt


def write_report(report: ExperimentReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2))


def evaluate_checkpoint(
    ckpt: Checkpoint,
    dataset_path: str | Path,
    *,
    all_windows: bool = False,
    rule: LabelRule = LabelRule(),
    speed_channel: str = "Vehicle speed",
):
    """Score a checkpoint on a recording using its stored scaler.

    By default the training run's split is rebuilt (same seed and fraction)
    and only its test side is scored.
    """
    cfg = ckpt.config
    table = load_csv(dataset_path)
    labels = label_frames(table, rule, speed_channel)
    raw = table_windows(
        table.select(ckpt.channels), labels, cfg.window, cfg.overlap,
        aggregation=cfg.aggregation, horizon=cfg.label_mode == "horizon",
    )
    if not all_windows:
        _, raw = split_dataset(raw, cfg.train_fraction, cfg.seed, by_trip=cfg.split_by_trip)
    windows = [replace(w, data=normalize_matrix(w.data, ckpt.stats)) for w in raw]
    return evaluate_windows(ckpt.model, ckpt.graph, windows)
