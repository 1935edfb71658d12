"""Sequence processors built from the cells: stacked, bidirectional, delayed.

Sequences are time-major arrays ``xs.shape == (T, ..., q)``; any dimensions
between time and features are batch dimensions and are carried through
unchanged. A delayed network with delay ``d`` is run on ``xs`` followed by
``d`` zero vectors, and the answer for ``x_t`` is read from step ``t + d``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cells import (DTYPE, LstmParams, OutputParams, RnnParams, activation, input_projection,
                    lstm_step, rnn_step)
from .linalg import DimensionError, Rng


@dataclass
class InitialState:
    """Per-layer initial hidden (and, for LSTMs, cell) states.

    For a bidirectional layer the vector is ``[forward h0, backward h0]``.
    """

    h: list[np.ndarray]
    c: list[np.ndarray] | None = None


@dataclass
class Trajectory:
    """States and outputs for every timestep of a forward run.

    ``hidden[i]`` and ``cell[i]`` are ``(steps, ..., width)`` arrays for layer
    ``i``; ``outputs`` holds ``g(logits)`` for every step, delay included.
    """

    hidden: list[np.ndarray]
    cell: list[np.ndarray] | None
    outputs: np.ndarray
    logits: np.ndarray
    delay: int = 0
    cache: list | None = field(default=None, repr=False)

    @property
    def delayed_outputs(self) -> np.ndarray:
        """Outputs aligned with the inputs: entry ``t`` answers ``x_t``."""
        return self.outputs[self.delay:]

    @property
    def delayed_logits(self) -> np.ndarray:
        return self.logits[self.delay:]


def pad_inputs(xs: np.ndarray, d: int) -> np.ndarray:
    """Append ``d`` zero vectors along the time axis."""
    if d < 0:
        raise ValueError(f"delay must be >= 0, got {d}")
    if d == 0:
        return xs
    return np.concatenate([xs, np.zeros((d,) + xs.shape[1:], dtype=xs.dtype)], axis=0)


def _state(v, batch, n, name):
    if v is None:
        return np.zeros(batch + (n,))
    v = np.asarray(v, dtype=DTYPE)
    if v.shape[-1] != n:
        raise DimensionError(f"{name} width {v.shape[-1]} != {n}")
    return np.broadcast_to(v, batch + (n,)).copy()


def run_layer(cell, xs, h0=None, c0=None, reverse=False, keep_gates=False):
    """Run one recurrent layer over ``xs``; returns ``(hs, cs, gates)``.

    With ``reverse=True`` the sequence is consumed from the end, but states
    are stored at the position of the input they just absorbed.
    """
    xs = np.asarray(xs, dtype=DTYPE)
    if xs.ndim < 2:
        raise DimensionError(f"xs must be (T, ..., q), got shape {xs.shape}")
    steps, batch, n = xs.shape[0], xs.shape[1:-1], cell.n
    lstm = isinstance(cell, LstmParams)
    h = _state(h0, batch, n, "h0")
    hs = np.empty((steps,) + batch + (n,))
    cs = gates = None
    if lstm:
        c = _state(c0, batch, n, "c0")
        cs = np.empty_like(hs)
        if keep_gates:
            gates = np.empty((steps, 4) + batch + (n,))
    xw = input_projection(cell, xs)
    order = range(steps - 1, -1, -1) if reverse else range(steps)
    for t in order:
        if lstm:
            h, c = lstm_step(cell, xs[t], h, c, None if gates is None else gates[t], xw[t])
            cs[t] = c
        else:
            h = rnn_step(cell, xs[t], h, xw[t])
        hs[t] = h
    return hs, cs, gates


@dataclass
class Layer:
    """A recurrent layer; bidirectional when ``bwd`` is set."""

    fwd: RnnParams | LstmParams
    bwd: RnnParams | LstmParams | None = None

    def __post_init__(self):
        if self.bwd is not None:
            if type(self.bwd) is not type(self.fwd):
                raise TypeError("forward and backward cells must be the same kind")
            if (self.bwd.n, self.bwd.q) != (self.fwd.n, self.fwd.q):
                raise DimensionError("forward and backward cells must have equal widths")

    @property
    def bidirectional(self) -> bool:
        return self.bwd is not None

    @property
    def is_lstm(self) -> bool:
        return isinstance(self.fwd, LstmParams)

    @property
    def q(self) -> int:
        return self.fwd.q

    @property
    def width(self) -> int:
        return self.fwd.n * (2 if self.bidirectional else 1)

    def cells(self):
        return [("fwd", self.fwd)] + ([("bwd", self.bwd)] if self.bwd is not None else [])

    def copy(self) -> "Layer":
        return Layer(self.fwd.copy(), None if self.bwd is None else self.bwd.copy())


@dataclass
class SeqNet:
    """Recurrent layers, a per-step output layer, and an output delay."""

    layers: list[Layer]
    output: OutputParams
    delay: int = 0

    def __post_init__(self):
        if not self.layers:
            raise ValueError("need at least one layer")
        if self.delay < 0:
            raise ValueError("delay must be >= 0")
        for below, above in zip(self.layers, self.layers[1:]):
            if above.q != below.width:
                raise DimensionError(f"layer input width {above.q} != {below.width}")
        if self.output.n != self.layers[-1].width:
            raise DimensionError(f"output expects width {self.output.n}, "
                                 f"top layer gives {self.layers[-1].width}")

    @property
    def q(self) -> int:
        return self.layers[0].q

    @property
    def m(self) -> int:
        return self.output.m

    @property
    def is_lstm(self) -> bool:
        return self.layers[0].is_lstm

    def parameters(self) -> dict[str, np.ndarray]:
        """Live references to every trainable array, keyed by dotted name."""
        out = {}
        for i, layer in enumerate(self.layers):
            for side, cell in layer.cells():
                for k, v in cell.arrays().items():
                    out[f"layers.{i}.{side}.{k}"] = v
        for k, v in self.output.arrays().items():
            out[f"output.{k}"] = v
        return out

    def copy(self) -> "SeqNet":
        return SeqNet([l.copy() for l in self.layers], self.output.copy(), self.delay)

    def load(self, arrays: dict[str, np.ndarray]) -> None:
        """Overwrite parameters in place from a name -> array mapping."""
        own = self.parameters()
        if set(own) != set(arrays):
            raise KeyError(f"parameter names differ: {sorted(set(own) ^ set(arrays))}")
        for k, v in own.items():
            v[...] = arrays[k]

    def forward(self, xs, init: InitialState | None = None, keep: bool = False) -> Trajectory:
        """Run on ``xs`` padded with ``delay`` zero steps.

        ``keep=True`` retains the per-layer inputs and gate values needed by
        backpropagation.
        """
        xs = np.asarray(xs, dtype=DTYPE)
        if xs.shape[-1] != self.q:
            raise DimensionError(f"input width {xs.shape[-1]} != {self.q}")
        inp = pad_inputs(xs, self.delay)
        hidden, cells, cache = [], [], []
        for i, layer in enumerate(self.layers):
            n = layer.fwd.n
            h0 = None if init is None else init.h[i]
            c0 = None if init is None or init.c is None else init.c[i]
            runs = []
            for j, (side, cell) in enumerate(layer.cells()):
                sl = slice(j * n, (j + 1) * n)
                runs.append(run_layer(cell, inp,
                                      None if h0 is None else np.asarray(h0)[..., sl],
                                      None if c0 is None else np.asarray(c0)[..., sl],
                                      reverse=(side == "bwd"), keep_gates=keep))
            hs = runs[0][0] if len(runs) == 1 else np.concatenate([r[0] for r in runs], axis=-1)
            if layer.is_lstm:
                cs = runs[0][1] if len(runs) == 1 else np.concatenate([r[1] for r in runs], axis=-1)
            else:
                cs = None
            if keep:
                cache.append({"inputs": inp, "gates": [r[2] for r in runs]})
            hidden.append(hs)
            cells.append(cs)
            inp = hs
        logits = inp @ self.output.w_o.T + self.output.b_o
        outputs = self.output.g(logits)
        return Trajectory(hidden, cells if self.is_lstm else None, outputs, logits,
                          self.delay, cache if keep else None)

    def predict(self, xs, init: InitialState | None = None) -> np.ndarray:
        """Delay-aligned outputs, one per input step."""
        return self.forward(xs, init).delayed_outputs

    def describe(self) -> dict:
        top = self.layers[0]
        return {
            "cell": "lstm" if top.is_lstm else "rnn",
            "f": None if top.is_lstm else top.fwd.f.kind,
            "g": self.output.g.kind,
            "layers": len(self.layers),
            "bidirectional": top.bidirectional,
            "hidden": top.fwd.n,
            "input": self.q,
            "output": self.m,
            "delay": self.delay,
        }

    @classmethod
    def build(cls, rng: Rng, *, cell: str = "lstm", q: int, n: int, m: int, layers: int = 1,
              bidirectional: bool = False, delay: int = 0, f: str = "tanh",
              g: str = "identity") -> "SeqNet":
        """Randomly initialised network, weights uniform in +-1/sqrt(n)."""
        if min(q, n, m, layers) < 1:
            raise ValueError("all widths and the layer count must be >= 1")

        def make(width_in):
            if cell == "lstm":
                return LstmParams.init(rng, n, width_in)
            if cell == "rnn":
                return RnnParams.init(rng, n, width_in, f)
            raise ValueError(f"unknown cell {cell!r}")

        stack, width = [], q
        for _ in range(layers):
            fwd = make(width)
            bwd = make(width) if bidirectional else None
            stack.append(Layer(fwd, bwd))
            width = stack[-1].width
        return cls(stack, OutputParams.init(rng, m, width, g), delay)

    @classmethod
    def from_describe(cls, d: dict) -> "SeqNet":
        """Zero-initialised network matching a :meth:`describe` dict."""
        return cls.build(Rng(0), cell=d["cell"], q=d["input"], n=d["hidden"], m=d["output"],
                         layers=d["layers"], bidirectional=d["bidirectional"],
                         delay=d["delay"], f=d["f"] or "tanh", g=d["g"])


@dataclass
class StackedParams:
    """``k`` unidirectional layers of equal cell kind plus an output layer."""

    layers: list[RnnParams | LstmParams]
    output: OutputParams

    def __post_init__(self):
        if not self.layers:
            raise ValueError("a stack needs k >= 1 layers")
        if len({type(l) for l in self.layers}) != 1:
            raise TypeError("all layers must be the same cell kind")

    @property
    def k(self) -> int:
        return len(self.layers)

    def as_net(self) -> SeqNet:
        return SeqNet([Layer(l) for l in self.layers], self.output, 0)

    @classmethod
    def init(cls, rng: Rng, *, cell: str = "rnn", k: int, n: int, q: int, m: int,
             f: str = "tanh", g: str = "identity") -> "StackedParams":
        net = SeqNet.build(rng, cell=cell, q=q, n=n, m=m, layers=k, f=f, g=g)
        return cls([l.fwd for l in net.layers], net.output)


def stacked_forward(p: StackedParams, init: InitialState | None, xs) -> Trajectory:
    """Run a stacked network; layer ``i`` consumes layer ``i-1`` at the same step."""
    return p.as_net().forward(xs, init)


def delayed_trajectory(cell, out: OutputParams, d: int, init: InitialState | None,
                       xs) -> Trajectory:
    """Full ``T + d`` step trajectory of a single-layer delayed network."""
    return SeqNet([Layer(cell)], out, d).forward(xs, init)


def delayed_forward(cell, out: OutputParams, d: int, init: InitialState | None, xs):
    """Outputs ``y_{1+d} .. y_{T+d}``; entry ``t`` answers ``x_t``."""
    return delayed_trajectory(cell, out, d, init, xs).delayed_outputs


def bidirectional_forward(fwd, bwd, out: OutputParams, init: InitialState | None, xs):
    """``y_t = g(W_o [h_t^fwd ; h_t^bwd] + b_o)`` where the backward state at
    ``t`` has consumed ``x_T .. x_t``."""
    return SeqNet([Layer(fwd, bwd)], out, 0).forward(xs, init).outputs


def nonlinearity_depth(arch: str, offset: int, d: int = 0) -> int:
    """Recurrent non-linearities between input ``x_{t0+offset}`` and the output
    for ``x_{t0}``; the output non-linearity is not counted."""
    if arch == "rnn":
        return 1 - offset if offset <= 0 else 0
    if arch == "bi_rnn":
        return 1 + abs(offset)
    if arch == "d_rnn":
        if d < 0:
            raise ValueError("delay must be >= 0")
        return d - offset + 1 if offset <= d else 0
    raise ValueError(f"unknown architecture {arch!r}")


def param_count(*bundles) -> int:
    """Number of scalar parameters in the given bundles or networks."""
    total = 0
    for b in bundles:
        if isinstance(b, SeqNet):
            arrays = list(b.parameters().values())
        elif isinstance(b, StackedParams):
            arrays = list(b.as_net().parameters().values())
        elif isinstance(b, Layer):
            arrays = [a for _, c in b.cells() for a in c.arrays().values()]
        else:
            arrays = list(b.arrays().values())
        for a in arrays:
            if 0 in a.shape:
                raise ValueError(f"zero-width parameter of shape {a.shape}")
            total += a.size
    return total


__all__ = [
    "InitialState", "Trajectory", "Layer", "SeqNet", "StackedParams", "pad_inputs",
    "run_layer", "stacked_forward", "delayed_trajectory", "delayed_forward",
    "bidirectional_forward", "nonlinearity_depth", "param_count", "activation",
]
