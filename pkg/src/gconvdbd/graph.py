"""Correlation graph over sensor channels and Chebyshev spectral filtering."""

from __future__ import annotations

import hashlib
import json
import logging
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """Pearson correlation; 0.0 when either input has zero variance."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    if len(x) < 2:
        raise ValueError("pearson needs at least two samples")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        return 0.0
    r = float(dx @ dy) / np.sqrt(sxx * syy)
    return float(min(1.0, max(-1.0, r)))


def correlation_matrix(data: np.ndarray) -> np.ndarray:
    """Pairwise Pearson coefficients of the columns of ``data`` (F x n).

    Constant columns correlate 0 with everything, including themselves.
    """
    data = np.asarray(data, dtype=float)
    centred = data - data.mean(axis=0)
    ss = np.einsum("fi,fi->i", centred, centred)
    const = ss == 0.0
    if np.any(const):
        log.warning("zero-variance channels %s get correlation 0", np.flatnonzero(const).tolist())
    scale = np.where(const, 1.0, np.sqrt(np.where(const, 1.0, ss)))
    z = centred / scale
    rho = z.T @ z
    rho[const, :] = 0.0
    rho[:, const] = 0.0
    return np.clip(rho, -1.0, 1.0)


def normalized_laplacian(adjacency: np.ndarray) -> np.ndarray:
    deg = adjacency.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(deg)
    n = len(adjacency)
    return np.eye(n) - inv_sqrt[:, None] * adjacency * inv_sqrt[None, :]


def estimate_lambda_max(laplacian: np.ndarray, iters: int = 200, seed: int = 0) -> float:
    """Largest eigenvalue of a symmetric PSD matrix by power iteration."""
    v = np.random.default_rng(seed).standard_normal(len(laplacian))
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = laplacian @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        lam = float(v @ laplacian @ v)
    return lam


@dataclass(frozen=True)
class SensorGraph:
    node_names: tuple[str, ...]
    adjacency: np.ndarray
    laplacian: np.ndarray
    scaled_laplacian: np.ndarray
    lambda_max: float

    @property
    def n(self) -> int:
        return len(self.node_names)

    @classmethod
    def from_adjacency(
        cls, adjacency: np.ndarray, node_names: Sequence[str], lambda_max: float | None = 2.0
    ) -> SensorGraph:
        """Derive both Laplacians; ``lambda_max=None`` estimates it by power iteration."""
        a = np.array(adjacency, dtype=float)
        n = len(node_names)
        if a.shape != (n, n):
            raise ValueError(f"adjacency shape {a.shape} does not match {n} nodes")
        if not np.allclose(a, a.T):
            raise ValueError("adjacency must be symmetric")
        if np.any(a.sum(axis=1) <= 0):
            raise ValueError("every node needs positive degree")
        lap = normalized_laplacian(a)
        lam = estimate_lambda_max(lap) if lambda_max is None else float(lambda_max)
        scaled = 2.0 * lap / lam - np.eye(n)
        for m in (a, lap, scaled):
            m.setflags(write=False)
        return cls(tuple(node_names), a, lap, scaled, lam)

    def to_dict(self) -> dict:
        return {
            "node_names": list(self.node_names),
            "adjacency": self.adjacency.ravel().tolist(),
            "lambda_max": self.lambda_max,
        }

    @classmethod
    def from_dict(cls, d: dict) -> SensorGraph:
        names = d["node_names"]
        a = np.asarray(d["adjacency"], dtype=float).reshape(len(names), len(names))
        return cls.from_adjacency(a, names, d.get("lambda_max", 2.0))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> SensorGraph:
        return cls.from_dict(json.loads(text))

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()


def build_graph(
    training_matrix: np.ndarray,
    node_names: Sequence[str],
    lambda_max: float | None = 2.0,
) -> SensorGraph:
    """Dense graph with weights exp(pearson) between every pair of channels.

    Self-loops are kept (weight e). ``training_matrix`` is frames x channels.
    """
    data = np.asarray(training_matrix, dtype=float)
    if data.ndim != 2 or data.shape[0] < 2 or data.shape[1] < 2:
        raise ValueError(f"need at least 2 frames and 2 channels, got {data.shape}")
    if data.shape[1] != len(node_names):
        raise ValueError("one node name per column required")
    rho = correlation_matrix(data)
    np.fill_diagonal(rho, 1.0)
    return SensorGraph.from_adjacency(np.exp(rho), node_names, lambda_max)


def cheb_basis(graph: SensorGraph | np.ndarray, K: int, x: np.ndarray) -> np.ndarray:
    """Stack ``[T_0(L~) x, ..., T_{K-1}(L~) x]`` along a new leading axis.

    ``x`` has nodes on its second-to-last axis (``(..., n, d)``); leading
    batch axes are carried through.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    lt = graph.scaled_laplacian if isinstance(graph, SensorGraph) else np.asarray(graph)
    x = np.asarray(x, dtype=float)
    out = np.empty((K,) + x.shape)
    out[0] = x
    if K > 1:
        out[1] = lt @ x
    for k in range(2, K):
        out[k] = 2.0 * (lt @ out[k - 1]) - out[k - 2]
    return out


@dataclass(frozen=True)
class ChebyshevFilter:
    """Coefficients ``theta[k, out, in]`` for every input/output channel pair."""

    theta: np.ndarray

    def __post_init__(self) -> None:
        if self.theta.ndim != 3 or self.theta.shape[0] < 1:
            raise ValueError("theta must be K x d_out x d_in with K >= 1")

    @property
    def K(self) -> int:
        return self.theta.shape[0]

    @property
    def d_out(self) -> int:
        return self.theta.shape[1]

    @property
    def d_in(self) -> int:
        return self.theta.shape[2]


def graph_conv(filt: ChebyshevFilter, graph: SensorGraph, x: np.ndarray) -> np.ndarray:
    """``y = sum_k T_k(L~) x theta_k^T`` for ``x`` of shape ``(..., n, d_in)``."""
    x = np.asarray(x, dtype=float)
    if x.ndim < 2 or x.shape[-2] != graph.n or x.shape[-1] != filt.d_in:
        raise ValueError(
            f"signal shape {x.shape} incompatible with {graph.n} nodes and d_in={filt.d_in}"
        )
    basis = cheb_basis(graph, filt.K, x)
    return np.einsum("k...i,koi->...o", basis, filt.theta)
