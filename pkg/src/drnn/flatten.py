"""Flatten a k-layer stack into one wide delayed layer and check equivalence.

The flattened hidden vector is split into ``k`` blocks of width ``n``; block
``i`` plays layer ``i``. The recurrent matrix is block lower-bidiagonal, with
layer ``i``'s recurrent weights on the diagonal and its input weights just
below it, so block ``i`` lags layer ``i`` by ``i - 1`` steps and the output
lags the stack by ``k - 1``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cells import GATES, LstmParams, OutputParams, RangeError, RnnParams, right_inverse
from .linalg import least_squares_solve
from .nets import InitialState, Layer, SeqNet, StackedParams

EQUIV_TOL = 1e-10
REPLAY_TOL = 1e-8
LIFT_CLAMP = 1e-9


class FlattenError(ValueError):
    pass


class LiftError(ValueError):
    """Initial-state lifting failed; ``block`` and ``step`` locate the failure."""

    def __init__(self, message: str, block: int | None = None, step: int | None = None):
        super().__init__(message)
        self.block = block
        self.step = step


@dataclass
class FlattenedNet:
    params: RnnParams | LstmParams
    output: OutputParams
    delay: int
    k: int
    n: int

    def block(self, v: np.ndarray, i: int) -> np.ndarray:
        """Block ``i`` (1-based) of a ``(..., k*n)`` array."""
        return v[..., (i - 1) * self.n:i * self.n]

    def as_net(self) -> SeqNet:
        return SeqNet([Layer(self.params)], self.output, self.delay)

    def check_layout(self, stacked: StackedParams | None = None) -> None:
        """Assert the block structure; with ``stacked``, also the block contents."""
        k, n = self.k, self.n
        mats = ([(self.params.w_x, self.params.w_h)] if isinstance(self.params, RnnParams)
                else [self.params.gate(a)[:2] for a in GATES])
        for w_x, w_h in mats:
            for i in range(k):
                for j in range(k):
                    blk = w_h[i * n:(i + 1) * n, j * n:(j + 1) * n]
                    if j not in (i, i - 1) and np.any(blk != 0):
                        raise FlattenError(f"recurrent block ({i + 1},{j + 1}) must be zero")
            if np.any(w_x[n:] != 0):
                raise FlattenError("input weights below block 1 must be zero")
        if np.any(self.output.w_o[:, :(k - 1) * n] != 0):
            raise FlattenError("output weights outside the last block must be zero")
        if stacked is not None:
            ref = _flatten(stacked)
            for a, b in zip(ref.as_net().parameters().values(), self.as_net().parameters().values()):
                if not np.array_equal(a, b):
                    raise FlattenError("flattened weights do not match the stack")


def _uniform_width(p: StackedParams) -> int:
    n = p.layers[0].n
    for i, layer in enumerate(p.layers):
        if layer.n != n:
            raise FlattenError(f"layer {i + 1} has width {layer.n}, expected uniform {n}")
        if i and layer.q != n:
            raise FlattenError(f"layer {i + 1} input width {layer.q} != {n}")
    if p.output.n != n:
        raise FlattenError("output layer width does not match the top layer")
    return n


def _block_matrices(w_xs, w_hs, bs, n, q):
    k = len(w_hs)
    w_h = np.zeros((k * n, k * n))
    for i in range(k):
        w_h[i * n:(i + 1) * n, i * n:(i + 1) * n] = w_hs[i]
        if i:
            w_h[i * n:(i + 1) * n, (i - 1) * n:i * n] = w_xs[i]
    w_x = np.zeros((k * n, q))
    w_x[:n] = w_xs[0]
    return w_x, w_h, np.concatenate(bs)


def _flatten(p: StackedParams) -> FlattenedNet:
    n, k, q = _uniform_width(p), p.k, p.layers[0].q
    if isinstance(p.layers[0], RnnParams):
        fs = {l.f for l in p.layers}
        if len(fs) != 1:
            raise FlattenError("all layers must share one activation")
        w_x, w_h, b = _block_matrices([l.w_x for l in p.layers], [l.w_h for l in p.layers],
                                      [l.b_h for l in p.layers], n, q)
        cell = RnnParams(w_x, w_h, b, fs.pop())
    else:
        gates = {}
        for a in GATES:
            parts = [l.gate(a) for l in p.layers]
            gates[a] = _block_matrices([x for x, _, _ in parts], [h for _, h, _ in parts],
                                       [b for _, _, b in parts], n, q)
        cell = LstmParams.from_gates(gates)
    w_o = np.zeros((p.output.m, k * n))
    w_o[:, (k - 1) * n:] = p.output.w_o
    out = OutputParams(w_o, p.output.b_o.copy(), p.output.g)
    return FlattenedNet(cell, out, k - 1, k, n)


def flatten_stacked_rnn(p: StackedParams) -> FlattenedNet:
    """Single wide RNN with delay ``k - 1`` reproducing the stack exactly."""
    if not isinstance(p.layers[0], RnnParams):
        raise TypeError("flatten_stacked_rnn needs RNN layers")
    return _flatten(p)


def flatten_stacked_lstm(p: StackedParams) -> FlattenedNet:
    """Same construction as :func:`flatten_stacked_rnn`, applied per gate."""
    if not isinstance(p.layers[0], LstmParams):
        raise TypeError("flatten_stacked_lstm needs LSTM layers")
    return _flatten(p)


def flatten(p: StackedParams) -> FlattenedNet:
    return _flatten(p)


# ---------------------------------------------------------------- initial states

def _warmup(flat: FlattenedNet, h0_hat, c0_hat, xs):
    """Flattened states at steps 0..k-1 (inputs there never reach blocks > 1 in time)."""
    k = flat.k
    lstm = isinstance(flat.params, LstmParams)
    steps = k - 1
    if xs is None:
        xs = np.zeros((steps, flat.params.q))
    xs = np.asarray(xs, dtype=float)[:steps]
    if xs.shape[0] < steps:
        xs = np.concatenate([xs, np.zeros((steps - xs.shape[0],) + xs.shape[1:])])
    hs, cs = [np.asarray(h0_hat, dtype=float)], [None if c0_hat is None else np.asarray(c0_hat, dtype=float)]
    if steps:
        traj = SeqNet([Layer(flat.params)], flat.output, 0).forward(
            xs, InitialState([h0_hat], [c0_hat] if lstm else None))
        hs += list(traj.hidden[0])
        if lstm:
            cs += list(traj.cell[0])
    return hs, cs


def forward_derived_init(flat: FlattenedNet, h0_hat, c0_hat=None, xs=None) -> InitialState:
    """Stacked initial states implied by an arbitrary flattened ``h0_hat``.

    Layer ``i`` starts from block ``i`` of the flattened state at step
    ``i - 1``; with these states the stack and the flattened net agree.
    """
    h0_hat = np.asarray(h0_hat, dtype=float)
    lstm = isinstance(flat.params, LstmParams)
    if h0_hat.shape[-1] != flat.k * flat.n:
        raise ValueError(f"h0_hat width {h0_hat.shape[-1]} != {flat.k * flat.n}")
    if lstm and c0_hat is None:
        raise ValueError("LSTM flattening needs c0_hat")
    hs, cs = _warmup(flat, h0_hat, c0_hat, xs)
    h = [flat.block(hs[i - 1], i).copy() for i in range(1, flat.k + 1)]
    c = [flat.block(cs[i - 1], i).copy() for i in range(1, flat.k + 1)] if lstm else None
    return InitialState(h, c)


def lift_initial_state(flat: FlattenedNet, stacked_init: InitialState,
                       clamp_tol: float = LIFT_CLAMP, replay_tol: float = REPLAY_TOL) -> np.ndarray:
    """Flattened ``h0_hat`` whose replay hits every stacked initial state.

    Block ``i`` is walked backward from its target at step ``i - 1`` to step
    0 by inverting ``h_s = f(W_x^(i) h_{s-1}^[i-1] + W_h^(i) h_{s-1} + b^(i))``
    through the activation's right-inverse and a least-squares solve. Raises
    :class:`LiftError` if a recurrent block is singular, an intermediate
    state leaves the activation's range, or the replay misses a target.
    """
    if not isinstance(flat.params, RnnParams):
        raise TypeError("initial-state lifting is defined for RNN cells")
    k, n = flat.k, flat.n
    f = flat.params.f
    w_h, b = flat.params.w_h, flat.params.b_h
    targets = [np.asarray(h, dtype=float) for h in stacked_init.h]
    if len(targets) != k or any(t.shape != (n,) for t in targets):
        raise ValueError(f"need {k} initial states of width {n}")

    # chain[i][s] = block i+1 of the flattened state at step s, s = 0..i
    chain = [[targets[0]]]
    for i in range(1, k):
        rows = slice(i * n, (i + 1) * n)
        wh_i = w_h[rows, rows]
        wx_i = w_h[rows, (i - 1) * n:i * n]
        b_i = b[rows]
        if np.linalg.matrix_rank(wh_i) < n:
            raise LiftError(f"recurrent block of layer {i + 1} is rank deficient", block=i + 1)
        states = [None] * (i + 1)
        states[i] = targets[i]
        for s in range(i, 0, -1):
            try:
                pre = right_inverse(f, states[s], clamp_tol)
            except RangeError as exc:
                raise LiftError(f"block {i + 1} step {s}: {exc}", block=i + 1, step=s) from exc
            rhs = pre - wx_i @ chain[i - 1][s - 1] - b_i
            states[s - 1], _ = least_squares_solve(wh_i, rhs)
        chain.append(states)
    h0_hat = np.concatenate([c[0] for c in chain])

    replay = forward_derived_init(flat, h0_hat)
    for i in range(k):
        err = float(np.max(np.abs(replay.h[i] - targets[i])))
        if err > replay_tol:
            raise LiftError(f"replay of block {i + 1} at step {i} misses target by {err:.3e}",
                            block=i + 1, step=i)
    return h0_hat


# ---------------------------------------------------------------- verification

@dataclass
class EquivalenceReport:
    max_output_diff: float
    max_hidden_diff: float
    max_cell_diff: float | None
    tolerance: float
    hidden_by_block: list[float] = field(default_factory=list)
    worst_block: int | None = None
    worst_step: int | None = None

    @property
    def passed(self) -> bool:
        diffs = [self.max_output_diff, self.max_hidden_diff]
        if self.max_cell_diff is not None:
            diffs.append(self.max_cell_diff)
        return all(np.isfinite(d) and d <= self.tolerance for d in diffs)

    def as_dict(self) -> dict:
        return {
            "max_output_diff": self.max_output_diff,
            "max_hidden_diff": self.max_hidden_diff,
            "max_cell_diff": self.max_cell_diff,
            "worst_block": self.worst_block,
            "worst_step": self.worst_step,
            "passed": self.passed,
        }


def verify_equivalence(stacked: StackedParams, stacked_init: InitialState | None,
                       flat: FlattenedNet, flat_init: InitialState | None, xs,
                       tol: float = EQUIV_TOL) -> EquivalenceReport:
    """Compare the stack with its flattened form over every step and layer.

    Checks ``y_hat[t + k - 1] == y[t]``, block ``i`` of ``h_hat[t + i - 1]``
    against layer ``i`` at ``t``, and likewise for LSTM cell states.
    """
    k, n = flat.k, flat.n
    if stacked.k != k or stacked.layers[0].n != n or type(stacked.layers[0]) is not type(flat.params):
        raise FlattenError("stacked and flattened networks have different layouts")
    xs = np.asarray(xs, dtype=float)
    steps = xs.shape[0]
    ref = stacked.as_net().forward(xs, stacked_init)
    got = flat.as_net().forward(xs, flat_init)

    out_diff = float(np.max(np.abs(got.outputs[k - 1:k - 1 + steps] - ref.outputs)))
    per_block, worst, worst_at = [], -1.0, (None, None)
    cell_diff = 0.0 if ref.cell is not None else None
    for i in range(1, k + 1):
        lagged = flat.block(got.hidden[0][i - 1:i - 1 + steps], i)
        d = np.abs(lagged - ref.hidden[i - 1])
        d = d.reshape(steps, -1).max(axis=1)
        per_block.append(float(d.max()))
        if d.max() > worst:
            worst, worst_at = float(d.max()), (i, int(np.argmax(d)) + 1)
        if ref.cell is not None:
            lagged_c = flat.block(got.cell[0][i - 1:i - 1 + steps], i)
            cell_diff = max(cell_diff, float(np.max(np.abs(lagged_c - ref.cell[i - 1]))))
    return EquivalenceReport(out_diff, max(per_block), cell_diff, tol, per_block, *worst_at)
