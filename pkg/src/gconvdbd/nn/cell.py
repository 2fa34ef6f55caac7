"""GConvLSTM cell: peephole LSTM whose linear maps are Chebyshev graph convolutions.

Shapes use ``B`` for batch, ``n`` for graph nodes, ``d_x``/``d_h`` for input
and hidden channels, ``K`` for the Chebyshev order. Gate blocks are stacked in
the order ``i, f, c, o`` along the leading axis of ``W_x``, ``W_h`` and ``b``;
peephole vectors are stacked ``i, f, o``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..graph import SensorGraph, cheb_basis

GATES = ("i", "f", "c", "o")
PEEPHOLES = ("i", "f", "o")


def sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class GConvLSTMParams:
    W_x: np.ndarray  # (4, K, d_h, d_x)
    W_h: np.ndarray  # (4, K, d_h, d_h)
    w_peep: np.ndarray  # (3, d_h)
    b: np.ndarray  # (4, d_h)

    def __post_init__(self) -> None:
        g, K, d_h, d_x = self.W_x.shape
        if g != 4 or self.W_h.shape != (4, K, d_h, d_h):
            raise ValueError(
                f"gate blocks disagree: W_x {self.W_x.shape}, W_h {self.W_h.shape}"
            )
        if self.w_peep.shape != (3, d_h) or self.b.shape != (4, d_h):
            raise ValueError("peephole or bias shape does not match d_h")

    @property
    def K(self) -> int:
        return self.W_x.shape[1]

    @property
    def d_h(self) -> int:
        return self.W_x.shape[2]

    @property
    def d_x(self) -> int:
        return self.W_x.shape[3]

    def arrays(self) -> dict[str, np.ndarray]:
        return {"W_x": self.W_x, "W_h": self.W_h, "w_peep": self.w_peep, "b": self.b}

    def gate(self, name: str) -> dict[str, np.ndarray]:
        """Views of the blocks belonging to one gate."""
        g = GATES.index(name)
        out = {"W_x": self.W_x[g], "W_h": self.W_h[g], "b": self.b[g]}
        if name in PEEPHOLES:
            out["w_peep"] = self.w_peep[PEEPHOLES.index(name)]
        return out

    @classmethod
    def zeros(cls, K: int, d_x: int, d_h: int) -> GConvLSTMParams:
        return cls(
            np.zeros((4, K, d_h, d_x)),
            np.zeros((4, K, d_h, d_h)),
            np.zeros((3, d_h)),
            np.zeros((4, d_h)),
        )

    @classmethod
    def init(cls, K: int, d_x: int, d_h: int, rng: np.random.Generator) -> GConvLSTMParams:
        """Uniform +-1/sqrt(fan_in) weights, zero biases, forget bias +1."""
        bx = 1.0 / np.sqrt(K * d_x)
        bh = 1.0 / np.sqrt(K * d_h)
        bp = 1.0 / np.sqrt(d_h)
        b = np.zeros((4, d_h))
        b[GATES.index("f")] = 1.0
        return cls(
            rng.uniform(-bx, bx, (4, K, d_h, d_x)),
            rng.uniform(-bh, bh, (4, K, d_h, d_h)),
            rng.uniform(-bp, bp, (3, d_h)),
            b,
        )


@dataclass(frozen=True)
class CellState:
    h: np.ndarray  # (..., n, d_h)
    C: np.ndarray

    @classmethod
    def zeros(cls, shape: tuple[int, ...]) -> CellState:
        return cls(np.zeros(shape), np.zeros(shape))


def _flat_weight(W: np.ndarray) -> np.ndarray:
    """(4, K, d_h, d_in) -> (K*d_in, 4*d_h) so a conv is one matmul."""
    g, K, d_h, d_in = W.shape
    return W.transpose(1, 3, 0, 2).reshape(K * d_in, g * d_h)


def _unflat_weight(W2: np.ndarray, K: int, d_in: int, d_h: int) -> np.ndarray:
    return W2.reshape(K, d_in, 4, d_h).transpose(2, 0, 3, 1)


def _flat_basis(basis: np.ndarray) -> np.ndarray:
    """(K, ..., n, d) -> (prod(...)*n, K*d)."""
    K = basis.shape[0]
    d = basis.shape[-1]
    moved = np.moveaxis(basis, 0, -2)  # (..., n, K, d)
    return moved.reshape(-1, K * d)


def chebyshev_matrices(graph: SensorGraph | np.ndarray, K: int) -> np.ndarray:
    """``T_k(L~)`` as explicit (K, n, n) matrices, via the same recurrence."""
    lt = graph.scaled_laplacian if isinstance(graph, SensorGraph) else np.asarray(graph)
    return cheb_basis(lt, K, np.eye(len(lt)))


def conv_gates(W: np.ndarray, graph, x: np.ndarray) -> np.ndarray:
    """Chebyshev conv of ``x`` (..., n, d_in) into all four gates: (..., n, 4, d_h)."""
    K, d_h = W.shape[1], W.shape[2]
    basis = cheb_basis(graph, K, x)
    z = _flat_basis(basis) @ _flat_weight(W)
    return z.reshape(x.shape[:-1] + (4, d_h))


def conv_adjoint(P: np.ndarray, W: np.ndarray, dz: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the conv input given ``dz`` (..., n, 4, d_h).

    ``P`` holds the (symmetric) Chebyshev matrices, so the adjoint of the
    basis expansion is ``sum_k P_k g_k``.
    """
    K, d_h, d_in = W.shape[1], W.shape[2], W.shape[3]
    lead = dz.shape[:-2]
    g = dz.reshape(-1, 4 * d_h) @ _flat_weight(W).T  # (..*n, K*d_in)
    g = g.reshape(lead + (K, d_in))
    g = np.moveaxis(g, -2, 0)  # (K, ..., n, d_in)
    return np.einsum("knm,k...md->...nd", P, g)


def conv_weight_grad(basis_flat: np.ndarray, dz: np.ndarray, K: int, d_in: int) -> np.ndarray:
    d_h = dz.shape[-1]
    return _unflat_weight(basis_flat.T @ dz.reshape(-1, 4 * d_h), K, d_in, d_h)


def _gate_math(z: np.ndarray, C_prev: np.ndarray, params: GConvLSTMParams):
    """Apply peepholes and nonlinearities to pre-activations ``z`` (..., n, 4, d_h)."""
    p_i, p_f, p_o = params.w_peep
    i = sigmoid(z[..., 0, :] + p_i * C_prev)
    f = sigmoid(z[..., 1, :] + p_f * C_prev)
    g = np.tanh(z[..., 2, :])
    C = f * C_prev + i * g
    o = sigmoid(z[..., 3, :] + p_o * C)
    tC = np.tanh(C)
    h = o * tC
    return i, f, g, o, C, tC, h


def gconvlstm_step(
    params: GConvLSTMParams, graph: SensorGraph, x_t: np.ndarray, state: CellState
) -> CellState:
    """Advance one time step. ``x_t`` is (..., n, d_x); state arrays (..., n, d_h)."""
    x_t = np.asarray(x_t, dtype=float)
    if x_t.shape[-2:] != (graph.n, params.d_x):
        raise ValueError(f"x_t shape {x_t.shape} does not match ({graph.n}, {params.d_x})")
    if state.h.shape[-2:] != (graph.n, params.d_h) or state.C.shape != state.h.shape:
        raise ValueError(f"state shape {state.h.shape} does not match ({graph.n}, {params.d_h})")
    z = conv_gates(params.W_x, graph, x_t) + conv_gates(params.W_h, graph, state.h) + params.b
    *_, C, _, h = _gate_math(z, state.C, params)
    return CellState(h, C)


class LayerTape:
    """Values a layer rollout keeps for its backward pass."""

    __slots__ = ("xb", "hb", "z", "C", "i", "f", "g", "o", "tC", "h0", "C0")


def layer_forward(
    params: GConvLSTMParams, graph: SensorGraph, xs: np.ndarray, record: bool = False
):
    """Unroll over ``xs`` (T, B, n, d_x) from zero state.

    Returns hidden states (T, B, n, d_h) and, if ``record``, a tape.
    """
    T, B, n, _ = xs.shape
    K, d_h = params.K, params.d_h
    basis_x = cheb_basis(graph, K, xs)
    xb = _flat_basis(basis_x)  # (T*B*n, K*d_x)
    zx = (xb @ _flat_weight(params.W_x)).reshape(T, B, n, 4, d_h) + params.b
    Wh2 = _flat_weight(params.W_h)

    h = np.zeros((B, n, d_h))
    C = np.zeros((B, n, d_h))
    hs = np.empty((T, B, n, d_h))
    if record:
        tape = LayerTape()
        tape.xb = xb
        tape.hb = np.empty((T, B * n, K * d_h))
        for name in ("z", "C", "i", "f", "g", "o", "tC"):
            setattr(tape, name, [None] * T)
    for t in range(T):
        hb = _flat_basis(cheb_basis(graph, K, h))
        z = zx[t] + (hb @ Wh2).reshape(B, n, 4, d_h)
        i, f, g, o, C_new, tC, h = _gate_math(z, C, params)
        if record:
            tape.hb[t] = hb
            tape.z[t], tape.i[t], tape.f[t], tape.g[t], tape.o[t], tape.tC[t] = z, i, f, g, o, tC
            tape.C[t] = C_new
        C = C_new
        hs[t] = h
    return (hs, tape) if record else (hs, None)


def layer_backward(
    params: GConvLSTMParams, P: np.ndarray, tape: LayerTape, dhs: np.ndarray
):
    """Backprop through the rollout given dL/dh_t for every step.

    Returns ``(grads, dxs)`` where ``grads`` mirrors :meth:`GConvLSTMParams.arrays`
    and ``dxs`` is dL/dx with the shape of the layer input.
    """
    T, B, n, d_h = dhs.shape
    K, d_x = params.K, params.d_x
    p_i, p_f, p_o = params.w_peep
    Wh2 = _flat_weight(params.W_h)

    dz_all = np.empty((T, B, n, 4, d_h))
    d_peep = np.zeros((3, d_h))
    dWh2 = np.zeros_like(Wh2)
    dh_next = np.zeros((B, n, d_h))
    dC_next = np.zeros((B, n, d_h))
    for t in range(T - 1, -1, -1):
        i, f, g, o, tC = tape.i[t], tape.f[t], tape.g[t], tape.o[t], tape.tC[t]
        C = tape.C[t]
        C_prev = tape.C[t - 1] if t > 0 else np.zeros_like(C)
        dh = dhs[t] + dh_next

        dzo = dh * tC * o * (1.0 - o)
        dC = dC_next + dh * o * (1.0 - tC * tC) + dzo * p_o
        dzf = dC * C_prev * f * (1.0 - f)
        dzi = dC * g * i * (1.0 - i)
        dzc = dC * i * (1.0 - g * g)
        dC_next = dC * f + dzi * p_i + dzf * p_f

        d_peep[0] += np.einsum("bnh,bnh->h", dzi, C_prev)
        d_peep[1] += np.einsum("bnh,bnh->h", dzf, C_prev)
        d_peep[2] += np.einsum("bnh,bnh->h", dzo, C)

        dz = dz_all[t]
        dz[..., 0, :] = dzi
        dz[..., 1, :] = dzf
        dz[..., 2, :] = dzc
        dz[..., 3, :] = dzo
        dWh2 += tape.hb[t].T @ dz.reshape(-1, 4 * d_h)
        dh_next = conv_adjoint(P, params.W_h, dz)

    dz_flat = dz_all.reshape(-1, 4 * d_h)
    grads = {
        "W_x": _unflat_weight(tape.xb.T @ dz_flat, K, d_x, d_h),
        "W_h": _unflat_weight(dWh2, K, d_h, d_h),
        "w_peep": d_peep,
        "b": dz_flat.sum(axis=0).reshape(4, d_h),
    }
    dxs = conv_adjoint(P, params.W_x, dz_all)
    return grads, dxs
