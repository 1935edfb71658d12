"""Activations and single-timestep RNN / LSTM cells.

Every step function accepts either a single vector (``x.shape == (q,)``) or a
batch with arbitrary leading dimensions (``x.shape == (..., q)``); weights
always act on the last axis.

LSTM gates are stored fused in the order (input ``e``, forget ``f``, output
``o``, cell ``c``): ``w_x`` is ``(4n, q)``, ``w_h`` is ``(4n, n)`` and ``b`` is
``(4n,)``. :meth:`LstmParams.gate` returns the per-gate views.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import DTYPE, DimensionError, Rng

TANH_CLAMP = 1e-12
SIGMOID_CLAMP = 1e-12
GATES = ("e", "f", "o", "c")


class RangeError(ValueError):
    """A value lies outside the range of an activation function."""


def sigmoid(z):
    """Logistic function via ``tanh``, which never overflows for large ``|z|``."""
    return 0.5 * np.tanh(0.5 * np.asarray(z, dtype=DTYPE)) + 0.5


def softmax(z, axis: int = -1):
    z = np.asarray(z, dtype=DTYPE)
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


@dataclass(frozen=True)
class Activation:
    """Elementwise activation ``f`` with range ``(lo, hi)`` and a right-inverse.

    ``softmax`` is vector-valued and only valid as an output activation.
    """

    kind: str
    lo: float = field(init=False)
    hi: float = field(init=False)

    _RANGES = {
        "tanh": (-1.0, 1.0),
        "sigmoid": (0.0, 1.0),
        "relu": (0.0, np.inf),
        "identity": (-np.inf, np.inf),
        "softmax": (0.0, 1.0),
    }

    def __post_init__(self):
        if self.kind not in self._RANGES:
            raise ValueError(f"unknown activation {self.kind!r}")
        lo, hi = self._RANGES[self.kind]
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def elementwise(self) -> bool:
        return self.kind != "softmax"

    def __call__(self, z):
        z = np.asarray(z, dtype=DTYPE)
        if self.kind == "tanh":
            return np.tanh(z)
        if self.kind == "sigmoid":
            return sigmoid(z)
        if self.kind == "relu":
            return np.maximum(z, 0.0)
        if self.kind == "identity":
            return z.copy()
        return softmax(z)

    def grad_from_output(self, y):
        """Elementwise derivative ``f'(z)`` expressed through ``y = f(z)``."""
        if self.kind == "tanh":
            return 1.0 - y * y
        if self.kind == "sigmoid":
            return y * (1.0 - y)
        if self.kind == "relu":
            return (y > 0).astype(DTYPE)
        if self.kind == "identity":
            return np.ones_like(y)
        raise ValueError("softmax has no elementwise derivative")

    def right_inverse(self, d, clamp_tol: float = 0.0):
        return right_inverse(self, d, clamp_tol)


def activation(kind) -> Activation:
    return kind if isinstance(kind, Activation) else Activation(kind)


def right_inverse(a: Activation, d, clamp_tol: float = 0.0) -> np.ndarray:
    """Return ``r(d)`` with ``a(r(d)) == d``.

    Entries up to ``clamp_tol`` outside the range are pulled back in before
    inverting; anything further out raises :class:`RangeError`. Open bounds of
    tanh and sigmoid are additionally clamped by 1e-12 so that ``atanh`` and
    ``logit`` stay finite.
    """
    a = activation(a)
    d = np.asarray(d, dtype=DTYPE)
    if not a.elementwise:
        raise ValueError("softmax has no elementwise right-inverse")
    if a.kind == "identity":
        return d.copy()
    if a.kind == "relu":
        if np.any(d < -clamp_tol):
            raise RangeError(f"relu right-inverse: min entry {d.min():.3e} < 0")
        return np.maximum(d, 0.0)
    if a.kind == "tanh":
        if np.any(np.abs(d) >= 1.0 + clamp_tol):
            raise RangeError(f"tanh right-inverse: max |entry| {np.abs(d).max():.3e} >= 1")
        return np.arctanh(np.clip(d, -1.0 + TANH_CLAMP, 1.0 - TANH_CLAMP))
    # sigmoid
    if np.any(d <= -clamp_tol) or np.any(d >= 1.0 + clamp_tol):
        raise RangeError("sigmoid right-inverse: entry outside (0, 1)")
    d = np.clip(d, SIGMOID_CLAMP, 1.0 - SIGMOID_CLAMP)
    return np.log(d) - np.log1p(-d)


# ---------------------------------------------------------------- parameters

def _check(arr, shape, name):
    arr = np.asarray(arr, dtype=DTYPE)
    if arr.shape != shape:
        raise DimensionError(f"{name}: expected shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


@dataclass
class RnnParams:
    w_x: np.ndarray
    w_h: np.ndarray
    b_h: np.ndarray
    f: Activation = Activation("tanh")

    def __post_init__(self):
        self.w_x = np.asarray(self.w_x, dtype=DTYPE)
        n, q = self.w_x.shape
        self.w_h = _check(self.w_h, (n, n), "w_h")
        self.b_h = _check(self.b_h, (n,), "b_h")
        self.w_x = _check(self.w_x, (n, q), "w_x")
        self.f = activation(self.f)
        if not self.f.elementwise:
            raise ValueError("softmax cannot be a recurrent activation")

    @property
    def n(self) -> int:
        return self.w_h.shape[0]

    @property
    def q(self) -> int:
        return self.w_x.shape[1]

    def arrays(self) -> dict[str, np.ndarray]:
        return {"w_x": self.w_x, "w_h": self.w_h, "b_h": self.b_h}

    def copy(self) -> "RnnParams":
        return RnnParams(self.w_x.copy(), self.w_h.copy(), self.b_h.copy(), self.f)

    @classmethod
    def zeros(cls, n: int, q: int, f="tanh") -> "RnnParams":
        return cls(np.zeros((n, q)), np.zeros((n, n)), np.zeros(n), activation(f))

    @classmethod
    def init(cls, rng: Rng, n: int, q: int, f="tanh") -> "RnnParams":
        s = 1.0 / np.sqrt(n)
        return cls(rng.uniform(-s, s, (n, q)), rng.uniform(-s, s, (n, n)),
                   rng.uniform(-s, s, (n,)), activation(f))


@dataclass
class LstmParams:
    w_x: np.ndarray
    w_h: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.w_x = np.asarray(self.w_x, dtype=DTYPE)
        four_n, q = self.w_x.shape
        if four_n % 4:
            raise DimensionError(f"LSTM w_x rows must be 4n, got {four_n}")
        n = four_n // 4
        self.w_h = _check(self.w_h, (4 * n, n), "w_h")
        self.b = _check(self.b, (4 * n,), "b")
        self.w_x = _check(self.w_x, (4 * n, q), "w_x")

    @property
    def n(self) -> int:
        return self.w_h.shape[1]

    @property
    def q(self) -> int:
        return self.w_x.shape[1]

    def gate(self, a: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Views ``(w_xa, w_ha, b_a)`` for gate ``a`` in ``GATES``."""
        i = GATES.index(a)
        sl = slice(i * self.n, (i + 1) * self.n)
        return self.w_x[sl], self.w_h[sl], self.b[sl]

    @classmethod
    def from_gates(cls, gates: dict[str, tuple]) -> "LstmParams":
        w_x = np.concatenate([np.asarray(gates[a][0], dtype=DTYPE) for a in GATES])
        w_h = np.concatenate([np.asarray(gates[a][1], dtype=DTYPE) for a in GATES])
        b = np.concatenate([np.asarray(gates[a][2], dtype=DTYPE) for a in GATES])
        return cls(w_x, w_h, b)

    def arrays(self) -> dict[str, np.ndarray]:
        return {"w_x": self.w_x, "w_h": self.w_h, "b": self.b}

    def copy(self) -> "LstmParams":
        return LstmParams(self.w_x.copy(), self.w_h.copy(), self.b.copy())

    @classmethod
    def zeros(cls, n: int, q: int) -> "LstmParams":
        return cls(np.zeros((4 * n, q)), np.zeros((4 * n, n)), np.zeros(4 * n))

    @classmethod
    def init(cls, rng: Rng, n: int, q: int) -> "LstmParams":
        s = 1.0 / np.sqrt(n)
        return cls(rng.uniform(-s, s, (4 * n, q)), rng.uniform(-s, s, (4 * n, n)),
                   rng.uniform(-s, s, (4 * n,)))


@dataclass
class OutputParams:
    w_o: np.ndarray
    b_o: np.ndarray
    g: Activation = Activation("identity")

    def __post_init__(self):
        self.w_o = np.asarray(self.w_o, dtype=DTYPE)
        m, n = self.w_o.shape
        self.w_o = _check(self.w_o, (m, n), "w_o")
        self.b_o = _check(self.b_o, (m,), "b_o")
        self.g = activation(self.g)

    @property
    def m(self) -> int:
        return self.w_o.shape[0]

    @property
    def n(self) -> int:
        return self.w_o.shape[1]

    def arrays(self) -> dict[str, np.ndarray]:
        return {"w_o": self.w_o, "b_o": self.b_o}

    def copy(self) -> "OutputParams":
        return OutputParams(self.w_o.copy(), self.b_o.copy(), self.g)

    @classmethod
    def init(cls, rng: Rng, m: int, n: int, g="identity") -> "OutputParams":
        s = 1.0 / np.sqrt(n)
        return cls(rng.uniform(-s, s, (m, n)), rng.uniform(-s, s, (m,)), activation(g))


CellParams = RnnParams | LstmParams


def _dims(p, x, h):
    if x.shape[-1] != p.q:
        raise DimensionError(f"input width {x.shape[-1]} != {p.q}")
    if h.shape[-1] != p.n:
        raise DimensionError(f"state width {h.shape[-1]} != {p.n}")


# ---------------------------------------------------------------- forward

def input_projection(p: CellParams, xs):
    """``W_x x + b`` for every row of ``xs``; lets a sequence run hoist it out of the loop."""
    xs = np.asarray(xs, dtype=DTYPE)
    if xs.shape[-1] != p.q:
        raise DimensionError(f"input width {xs.shape[-1]} != {p.q}")
    return xs @ p.w_x.T + (p.b_h if isinstance(p, RnnParams) else p.b)


def rnn_step(p: RnnParams, x_t, h_prev, xw=None):
    """``h_t = f(W_x x_t + b_h + W_h h_{t-1})``.

    ``xw`` optionally supplies ``W_x x_t + b_h`` precomputed.
    """
    x_t = np.asarray(x_t, dtype=DTYPE)
    h_prev = np.asarray(h_prev, dtype=DTYPE)
    _dims(p, x_t, h_prev)
    if xw is None:
        xw = x_t @ p.w_x.T + p.b_h
    return p.f(xw + h_prev @ p.w_h.T)


def output_step(p: OutputParams, h_t):
    h_t = np.asarray(h_t, dtype=DTYPE)
    if h_t.shape[-1] != p.n:
        raise DimensionError(f"state width {h_t.shape[-1]} != {p.n}")
    return p.g(h_t @ p.w_o.T + p.b_o)


def lstm_gates(p: LstmParams, x_t, h_prev, xw=None) -> np.ndarray:
    """Activated gates stacked along a new leading axis: ``(4, ..., n)``."""
    n = p.n
    if xw is None:
        xw = x_t @ p.w_x.T + p.b
    z = xw + h_prev @ p.w_h.T
    z = np.moveaxis(z.reshape(z.shape[:-1] + (4, n)), -2, 0)
    g = np.empty_like(z)
    g[:3] = sigmoid(z[:3])
    g[3] = np.tanh(z[3])
    return g


def lstm_step(p: LstmParams, x_t, h_prev, c_prev, gates=None, xw=None):
    """One LSTM step; returns ``(h_t, c_t)``.

    Pass a preallocated ``gates`` array of shape ``(4, ..., n)`` to receive the
    activated gate values for reuse by :func:`lstm_step_backward`. ``xw``
    optionally supplies ``W_x x_t + b`` precomputed.
    """
    x_t = np.asarray(x_t, dtype=DTYPE)
    h_prev = np.asarray(h_prev, dtype=DTYPE)
    c_prev = np.asarray(c_prev, dtype=DTYPE)
    _dims(p, x_t, h_prev)
    if c_prev.shape != h_prev.shape:
        raise DimensionError(f"cell state shape {c_prev.shape} != {h_prev.shape}")
    g = lstm_gates(p, x_t, h_prev, xw)
    if gates is not None:
        gates[...] = g
    e, f, o, cg = g
    c_t = f * c_prev + e * cg
    h_t = o * np.tanh(c_t)
    return h_t, c_t


# ---------------------------------------------------------------- backward

def _outer_sum(dz, v):
    """Sum over leading (batch) dims of ``dz[..., :, None] * v[..., None, :]``."""
    return dz.reshape(-1, dz.shape[-1]).T @ v.reshape(-1, v.shape[-1])


def _bias_sum(dz):
    return dz.reshape(-1, dz.shape[-1]).sum(axis=0)


def rnn_step_backward(p: RnnParams, x_t, h_prev, upstream, h_t=None) -> dict[str, np.ndarray]:
    """Reverse-mode gradients of one :func:`rnn_step` given ``dL/dh_t``.

    Returns a dict with ``w_x``, ``w_h``, ``b_h`` (summed over batch dims),
    ``h_prev`` and ``x``.
    """
    x_t = np.asarray(x_t, dtype=DTYPE)
    h_prev = np.asarray(h_prev, dtype=DTYPE)
    upstream = np.asarray(upstream, dtype=DTYPE)
    _dims(p, x_t, h_prev)
    if upstream.shape != h_prev.shape:
        raise DimensionError(f"upstream shape {upstream.shape} != {h_prev.shape}")
    if h_t is None:
        h_t = rnn_step(p, x_t, h_prev)
    dz = upstream * p.f.grad_from_output(h_t)
    return {
        "w_x": _outer_sum(dz, x_t),
        "w_h": _outer_sum(dz, h_prev),
        "b_h": _bias_sum(dz),
        "h_prev": dz @ p.w_h,
        "x": dz @ p.w_x,
    }


def lstm_step_backward(p: LstmParams, x_t, h_prev, c_prev, upstream_h, upstream_c,
                       gates=None, c_t=None) -> dict[str, np.ndarray]:
    """Reverse-mode gradients of one :func:`lstm_step`.

    ``upstream_h`` and ``upstream_c`` are ``dL/dh_t`` and the gradient reaching
    ``c_t`` from later timesteps. Returns ``w_x``, ``w_h``, ``b``, ``h_prev``,
    ``c_prev`` and ``x``.
    """
    x_t = np.asarray(x_t, dtype=DTYPE)
    h_prev = np.asarray(h_prev, dtype=DTYPE)
    c_prev = np.asarray(c_prev, dtype=DTYPE)
    _dims(p, x_t, h_prev)
    if gates is None:
        gates = lstm_gates(p, x_t, h_prev)
    e, f, o, g = gates
    if c_t is None:
        c_t = f * c_prev + e * g
    tc = np.tanh(c_t)
    dc = upstream_c + upstream_h * o * (1.0 - tc * tc)
    dz = np.empty_like(gates)
    dz[0] = dc * g * e * (1.0 - e)
    dz[1] = dc * c_prev * f * (1.0 - f)
    dz[2] = upstream_h * tc * o * (1.0 - o)
    dz[3] = dc * e * (1.0 - g * g)
    dz = np.moveaxis(dz, 0, -2).reshape(x_t.shape[:-1] + (4 * p.n,))
    return {
        "w_x": _outer_sum(dz, x_t),
        "w_h": _outer_sum(dz, h_prev),
        "b": _bias_sum(dz),
        "h_prev": dz @ p.w_h,
        "c_prev": dc * f,
        "x": dz @ p.w_x,
    }
