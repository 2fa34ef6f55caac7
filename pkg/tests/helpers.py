"""Independent oracles and builders shared by the unit and acceptance tests."""

from __future__ import annotations

import math

import numpy as np

from gconvdbd.dataset import LabeledWindow, NormalizationStats
from gconvdbd.graph import build_graph
from gconvdbd.nn import Checkpoint, GConvLSTMClassifier, ModelConfig, bce_grad, bce_loss


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, ok: bool | None, detail: str) -> None:
    """Print and keep one PASS/FAIL/NOT-RUN line for the terminal summary."""
    status = "NOT-RUN" if ok is None else "PASS" if ok else "FAIL"
    line = f"criterion {number}: {status:<7} {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def separable_windows(n_windows=200, T=10, n=3, seed=0, channel=0):
    """Windows whose label is fixed by whether one channel's mean exceeds 0.5."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n_windows):
        high = k % 2 == 1
        level = rng.uniform(0.6, 0.9) if high else rng.uniform(0.1, 0.4)
        data = rng.uniform(0, 1, (T, n))
        data[:, channel] = np.clip(level + rng.normal(0, 0.05, T), 0, 1)
        out.append(LabeledWindow(data, int(data[:, channel].mean() > 0.5), k))
    return out


def constant_checkpoint(p: float, n: int = 4, T: int = 10) -> Checkpoint:
    """Model whose output probability is ``p`` for any input (all weights zero)."""
    names = [f"s{k}" for k in range(n)]
    cfg = ModelConfig(hidden_sizes=(2, 2), window=T)
    model = GConvLSTMClassifier.zeros(n, cfg)
    model.b_out[0] = math.log(p / (1 - p))
    graph = build_graph(np.random.default_rng(0).normal(size=(30, n)), names)
    stats = NormalizationStats(tuple(names), np.zeros(n), np.full(n, 100.0))
    return Checkpoint(model, graph, stats, "custom")


# ------------------------------------------------------------ gradients


def _loss(model, graph, x, y, seed):
    p = model.forward(graph, x, train=True, rng=np.random.default_rng(seed))
    return bce_loss(p, y)


def gradient_check(model, graph, x, y, seed=0, h=1e-6, rel=1e-4, abs_floor=1e-6):
    """Compare backprop against central differences for every parameter entry.

    Dropout masks are pinned by reseeding the generator on each evaluation.
    Returns ``(ok, worst_relative_error, n_checked)``.
    """
    p = model.forward(graph, x, train=True, rng=np.random.default_rng(seed), record=True)
    grads = model.backward(graph, bce_grad(p, y))
    worst, ok, count = 0.0, True, 0
    for name, arr in model.parameters().items():
        g = grads[name]
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            up = _loss(model, graph, x, y, seed)
            arr[idx] = old - h
            down = _loss(model, graph, x, y, seed)
            arr[idx] = old
            fd = (up - down) / (2 * h)
            an = g[idx]
            diff = abs(fd - an)
            scale = max(abs(fd), abs(an))
            if scale > abs_floor:
                worst = max(worst, diff / scale)
            if not (diff <= rel * scale or diff <= abs_floor):
                ok = False
            count += 1
    return ok, worst, count


# ------------------------------------------------------- reference cell


def _sig(z):
    return 1.0 / (1.0 + math.exp(-z))


def reference_lstm_step(params, x, h, C):
    """Peephole LSTM on one node with K = 1, in plain Python lists.

    ``params`` is a GConvLSTMParams with K == 1; only its numbers are read.
    """
    d_h, d_x = params.d_h, params.d_x
    Wx = params.W_x[:, 0].tolist()
    Wh = params.W_h[:, 0].tolist()
    b = params.b.tolist()
    pi, pf, po = params.w_peep.tolist()

    def pre(g, j):
        s = b[g][j]
        s += sum(Wx[g][j][k] * x[k] for k in range(d_x))
        s += sum(Wh[g][j][k] * h[k] for k in range(d_h))
        return s

    C_new, h_new = [], []
    for j in range(d_h):
        i = _sig(pre(0, j) + pi[j] * C[j])
        f = _sig(pre(1, j) + pf[j] * C[j])
        g = math.tanh(pre(2, j))
        c = f * C[j] + i * g
        o = _sig(pre(3, j) + po[j] * c)
        C_new.append(c)
        h_new.append(o * math.tanh(c))
    return h_new, C_new
