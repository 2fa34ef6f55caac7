"""Two stacked GConvLSTM layers, dropout and a sigmoid readout."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
import json
from pathlib import Path

import numpy as np

from ..graph import SensorGraph
from .cell import GConvLSTMParams, chebyshev_matrices, layer_backward, layer_forward, sigmoid

BCE_EPS = 1e-7


@dataclass
class ModelConfig:
    """Architecture, training and windowing knobs.

    Serialised as a flat JSON object with exactly these keys; missing keys
    take the defaults below.
    """

    hidden_sizes: tuple[int, ...] = (32, 16)
    K: int = 3
    dropout_p: float = 0.5
    window: int = 10
    learning_rate: float = 0.001
    epochs: int = 20
    seed: int = 0
    batch_size: int = 32
    threshold: float = 0.5
    readout: str = "flatten"  # or "mean"
    pos_weight: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # data preparation
    overlap: float = 0.5
    train_fraction: float = 0.8
    label_mode: str = "horizon"  # or "same"
    aggregation: str = "any"  # or "majority"
    split_by_trip: bool = False

    def __post_init__(self) -> None:
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)
        if not 0 <= self.dropout_p < 1:
            raise ValueError("dropout_p must lie in [0, 1)")
        if min(self.hidden_sizes, default=0) < 1 or self.K < 1 or self.window < 1:
            raise ValueError("hidden sizes, K and window must all be >= 1")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.readout not in ("flatten", "mean"):
            raise ValueError(f"unknown readout {self.readout!r}")
        if self.label_mode not in ("horizon", "same"):
            raise ValueError(f"unknown label_mode {self.label_mode!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_sizes"] = list(self.hidden_sizes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> ModelConfig:
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class ForwardTape:
    x_shape: tuple[int, ...]
    layer_tapes: list
    readout_in: np.ndarray  # (B, R) before dropout
    mask: np.ndarray | None
    p: np.ndarray


@dataclass
class GConvLSTMClassifier:
    n_nodes: int
    config: ModelConfig
    layers: list[GConvLSTMParams]
    w_out: np.ndarray  # (R,)
    b_out: np.ndarray  # (1,)
    _tape: ForwardTape | None = field(default=None, repr=False, compare=False)

    @classmethod
    def init(cls, n_nodes: int, config: ModelConfig, rng: np.random.Generator,
             d_x: int = 1) -> GConvLSTMClassifier:
        layers = []
        d_in = d_x
        for d_h in config.hidden_sizes:
            layers.append(GConvLSTMParams.init(config.K, d_in, d_h, rng))
            d_in = d_h
        r = cls.readout_size(n_nodes, config)
        bound = 1.0 / np.sqrt(r)
        return cls(n_nodes, config, layers, rng.uniform(-bound, bound, r), np.zeros(1))

    @classmethod
    def zeros(cls, n_nodes: int, config: ModelConfig, d_x: int = 1) -> GConvLSTMClassifier:
        layers = []
        d_in = d_x
        for d_h in config.hidden_sizes:
            layers.append(GConvLSTMParams.zeros(config.K, d_in, d_h))
            d_in = d_h
        return cls(n_nodes, config, layers, np.zeros(cls.readout_size(n_nodes, config)), np.zeros(1))

    @staticmethod
    def readout_size(n_nodes: int, config: ModelConfig) -> int:
        last = config.hidden_sizes[-1]
        return n_nodes * last if config.readout == "flatten" else last

    @property
    def d_x(self) -> int:
        return self.layers[0].d_x

    def parameters(self) -> dict[str, np.ndarray]:
        """Live references to every weight array, keyed by a stable name."""
        out = {}
        for k, layer in enumerate(self.layers):
            for name, arr in layer.arrays().items():
                out[f"layer{k}.{name}"] = arr
        out["out.w"] = self.w_out
        out["out.b"] = self.b_out
        return out

    def copy(self) -> GConvLSTMClassifier:
        layers = [GConvLSTMParams(*(a.copy() for a in l.arrays().values())) for l in self.layers]
        return GConvLSTMClassifier(self.n_nodes, self.config, layers, self.w_out.copy(), self.b_out.copy())

    # ------------------------------------------------------------ forward

    def _as_batch(self, x: np.ndarray) -> np.ndarray:
        """Return (T, B, n, d_x) from one window or a batch.

        Accepted: (T, n) and (B, T, n) when d_x == 1; (T, n, d_x) when
        d_x > 1; (B, T, n, d_x) always.
        """
        x = np.asarray(x, dtype=float)
        T, n, d_x = self.config.window, self.n_nodes, self.d_x
        if x.ndim == 2 or (x.ndim == 3 and d_x > 1):
            x = x[None]
        if x.ndim == 3:
            x = x[..., None]
        if x.ndim != 4 or x.shape[2:] != (n, d_x):
            raise ValueError(f"window shape {x.shape} incompatible with n={n}, d_x={d_x}")
        if x.shape[1] != T:
            raise ValueError(f"window has {x.shape[1]} steps, model expects T={T}")
        return x.transpose(1, 0, 2, 3)

    def forward(
        self,
        graph: SensorGraph,
        x: np.ndarray,
        train: bool = False,
        rng: np.random.Generator | None = None,
        record: bool = False,
    ) -> np.ndarray:
        """Probability of the unsafe class for each window in ``x``.

        Dropout is active only when ``train`` is true. With ``record`` the
        intermediate values are kept for :meth:`backward`.
        """
        if graph.n != self.n_nodes:
            raise ValueError(f"graph has {graph.n} nodes, model expects {self.n_nodes}")
        xs = self._as_batch(x)
        h = xs
        tapes = []
        for layer in self.layers:
            h, tape = layer_forward(layer, graph, h, record)
            tapes.append(tape)
        last = h[-1]  # (B, n, d_h)
        r = last.reshape(last.shape[0], -1) if self.config.readout == "flatten" else last.mean(axis=1)
        mask = None
        p_drop = self.config.dropout_p
        if train and p_drop > 0:
            if rng is None:
                raise ValueError("training-mode forward needs an rng for dropout")
            mask = (rng.random(r.shape) >= p_drop) / (1.0 - p_drop)
            r_used = r * mask
        else:
            r_used = r
        p = sigmoid(r_used @ self.w_out + self.b_out[0])
        if record:
            self._tape = ForwardTape(xs.shape, tapes, r, mask, p)
        return p

    # ----------------------------------------------------------- backward

    def backward(self, graph: SensorGraph, dp: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients of a scalar loss given dL/dp from the last recorded forward."""
        tape = self._tape
        if tape is None:
            raise RuntimeError("backward called before a recorded forward pass")
        dp = np.asarray(dp, dtype=float)
        p = tape.p
        dlogit = dp * p * (1.0 - p)  # (B,)
        r_used = tape.readout_in * tape.mask if tape.mask is not None else tape.readout_in
        grads: dict[str, np.ndarray] = {
            "out.w": r_used.T @ dlogit,
            "out.b": np.array([dlogit.sum()]),
        }
        dr = np.outer(dlogit, self.w_out)
        if tape.mask is not None:
            dr = dr * tape.mask
        T, B, n, _ = tape.x_shape
        d_last = self.config.hidden_sizes[-1]
        if self.config.readout == "flatten":
            dlast = dr.reshape(B, n, d_last)
        else:
            dlast = np.repeat(dr[:, None, :] / n, n, axis=1)

        P = chebyshev_matrices(graph, self.config.K)
        dhs = np.zeros((T, B, n, d_last))
        dhs[-1] = dlast
        for k in range(len(self.layers) - 1, -1, -1):
            g, dhs = layer_backward(self.layers[k], P, tape.layer_tapes[k], dhs)
            for name, arr in g.items():
                grads[f"layer{k}.{name}"] = arr
        self._tape = None
        return grads


def forward(model: GConvLSTMClassifier, graph: SensorGraph, window: np.ndarray,
            mode: str = "eval", rng: np.random.Generator | None = None) -> np.ndarray:
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")
    return model.forward(graph, window, train=(mode == "train"), rng=rng)


def bce_loss(p, y, eps: float = BCE_EPS, pos_weight: float = 1.0) -> float:
    """Mean binary cross-entropy with probabilities clamped to [eps, 1-eps]."""
    p = np.atleast_1d(np.asarray(p, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {y.shape}")
    pc = np.clip(p, eps, 1.0 - eps)
    terms = -(pos_weight * y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))
    return float(terms.mean())


def bce_grad(p, y, eps: float = BCE_EPS, pos_weight: float = 1.0) -> np.ndarray:
    """dL/dp of :func:`bce_loss`; zero where the clamp is active."""
    p = np.atleast_1d(np.asarray(p, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {y.shape}")
    inside = (p > eps) & (p < 1.0 - eps)
    g = (-pos_weight * y / p + (1.0 - y) / (1.0 - p)) / len(p)
    return np.where(inside, g, 0.0)
