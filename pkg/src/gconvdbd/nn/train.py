from __future__ import annotations

import logging
import warnings
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from ..dataset import LabeledWindow
from ..graph import SensorGraph
from .model import GConvLSTMClassifier, ModelConfig, bce_grad, bce_loss
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)


@dataclass
class TrainResult:
    model: GConvLSTMClassifier
    loss_trace: list[float]  # eval-mode loss on the training set after each epoch
    batch_losses: list[float] = field(default_factory=list)  # train-mode, per mini-batch
    initial_loss: float = float("nan")


def stack_windows(windows: Sequence[LabeledWindow]) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([w.data for w in windows])
    y = np.array([w.label for w in windows], dtype=float)
    return x, y


def evaluate_loss(model: GConvLSTMClassifier, graph: SensorGraph, x: np.ndarray, y: np.ndarray,
                  batch_size: int = 256) -> float:
    ps = predict_proba(model, graph, x, batch_size)
    return bce_loss(ps, y, pos_weight=model.config.pos_weight)


def predict_proba(model: GConvLSTMClassifier, graph: SensorGraph, x: np.ndarray,
                  batch_size: int = 256) -> np.ndarray:
    """Eval-mode probabilities for a stack of windows (B, T, n[, d_x])."""
    x = np.asarray(x, dtype=float)
    if len(x) == 0:
        return np.zeros(0)
    return np.concatenate(
        [model.forward(graph, x[a : a + batch_size]) for a in range(0, len(x), batch_size)]
    )


def train(
    model: GConvLSTMClassifier | None,
    graph: SensorGraph,
    train_windows: Sequence[LabeledWindow],
    config: ModelConfig,
) -> TrainResult:
    """Mini-batch Adam on binary cross-entropy.

    One generator seeded from ``config.seed`` drives initialisation (when
    ``model`` is None), batch shuffling and dropout masks, so runs are
    reproducible bit for bit.
    """
    if not train_windows:
        raise ValueError("empty training set")
    x, y = stack_windows(train_windows)
    if len(np.unique(y)) < 2:
        warnings.warn("training set holds a single class", stacklevel=2)
    rng = np.random.default_rng(config.seed)
    if model is None:
        model = GConvLSTMClassifier.init(graph.n, config, rng)
    params = model.parameters()
    opt = AdamState(config.beta1, config.beta2, config.adam_eps)

    result = TrainResult(model, [], initial_loss=evaluate_loss(model, graph, x, y))
    n = len(x)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for a in range(0, n, config.batch_size):
            idx = order[a : a + config.batch_size]
            p = model.forward(graph, x[idx], train=True, rng=rng, record=True)
            result.batch_losses.append(bce_loss(p, y[idx], pos_weight=config.pos_weight))
            grads = model.backward(graph, bce_grad(p, y[idx], pos_weight=config.pos_weight))
            adam_step(opt, params, grads, config.learning_rate)
        loss = evaluate_loss(model, graph, x, y)
        result.loss_trace.append(loss)
        log.info("epoch %d/%d  loss %.6f", epoch + 1, config.epochs, loss)
    return result


def predict(model: GConvLSTMClassifier, graph: SensorGraph, window: np.ndarray,
            threshold: float | None = None) -> tuple[int, float]:
    """Label and probability for one window; ties at the threshold count as unsafe."""
    thr = model.config.threshold if threshold is None else threshold
    p = float(model.forward(graph, window)[0])
    return int(p >= thr), p
