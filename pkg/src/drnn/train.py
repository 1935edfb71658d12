"""Losses, backpropagation through time, Adam, and the training loop."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .cells import LstmParams, lstm_step_backward, rnn_step_backward, softmax
from .linalg import Rng
from .nets import InitialState, SeqNet

log = logging.getLogger(__name__)

LN2 = math.log(2.0)


# ---------------------------------------------------------------- losses

def cross_entropy(pred, label: int) -> float:
    """``-ln pred[label]`` for a probability vector."""
    pred = np.asarray(pred, dtype=float)
    if not 0 <= label < pred.shape[-1]:
        raise IndexError(f"label {label} out of range for {pred.shape[-1]} classes")
    if abs(pred.sum() - 1.0) > 1e-8:
        raise ValueError("pred must sum to 1")
    return float(-np.log(pred[label]))


def softmax_cross_entropy(logits, labels):
    """Per-position cross-entropy from logits; returns ``(loss, softmax)``."""
    logits = np.asarray(logits, dtype=float)
    labels = np.asarray(labels)
    m = logits.shape[-1]
    if labels.size and (labels.min() < 0 or labels.max() >= m):
        raise IndexError(f"labels out of range for {m} classes")
    shift = logits - logits.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shift).sum(axis=-1))
    picked = np.take_along_axis(shift, labels[..., None].astype(np.intp), axis=-1)[..., 0]
    return lse - picked, softmax(logits)


def mse(pred, target) -> float:
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"mse: shapes {pred.shape} and {target.shape} differ")
    return float(np.mean((pred - target) ** 2))


def bits_per_character(total_ce_nats: float, n_positions: int) -> float:
    if n_positions <= 0:
        raise ValueError("no evaluated positions")
    return total_ce_nats / n_positions / LN2


# ---------------------------------------------------------------- BPTT

def _position_loss(traj, labels, loss_kind):
    """Per-position loss and its gradient w.r.t. the delay-aligned logits."""
    logits = traj.delayed_logits
    if loss_kind == "ce":
        loss, probs = softmax_cross_entropy(logits, labels)
        onehot = np.zeros_like(probs)
        np.put_along_axis(onehot, np.asarray(labels)[..., None].astype(np.intp), 1.0, axis=-1)
        return loss, probs - onehot
    if loss_kind == "mse":
        out = traj.delayed_outputs
        labels = np.asarray(labels, dtype=float).reshape(out.shape)
        diff = out - labels
        return (diff ** 2).mean(axis=-1), diff * (2.0 / out.shape[-1])
    raise ValueError(f"unknown loss kind {loss_kind!r}")


def _weights(mask):
    """Per-position loss weights: mean over each sequence's masked steps,
    then mean over sequences that have any."""
    mask = np.asarray(mask, dtype=bool)
    counts = mask.sum(axis=0)
    valid = counts > 0
    if not valid.any():
        raise ValueError("loss mask selects no positions")
    n_seq = int(valid.sum())
    w = np.where(mask, 1.0 / np.maximum(counts, 1), 0.0) / n_seq
    return w


def layer_backward(cell, xs, hs, cs, gates, h0, c0, dhs, reverse=False):
    """Backpropagate ``dL/dh`` through one recurrent run.

    Returns ``(grads, dxs)`` where ``grads`` mirrors ``cell.arrays()``.
    """
    steps = xs.shape[0]
    lstm = isinstance(cell, LstmParams)
    grads = {k: np.zeros_like(v) for k, v in cell.arrays().items()}
    dxs = np.empty_like(xs)
    dh = np.zeros_like(hs[0])
    dc = np.zeros_like(hs[0]) if lstm else None
    order = range(steps) if reverse else range(steps - 1, -1, -1)
    for t in order:
        prev = t + 1 if reverse else t - 1
        first = prev < 0 or prev >= steps
        h_prev = h0 if first else hs[prev]
        if lstm:
            c_prev = c0 if first else cs[prev]
            g = lstm_step_backward(cell, xs[t], h_prev, c_prev, dhs[t] + dh, dc,
                                   gates=None if gates is None else gates[t], c_t=cs[t])
            dc = g["c_prev"]
        else:
            g = rnn_step_backward(cell, xs[t], h_prev, dhs[t] + dh, h_t=hs[t])
        for k in grads:
            grads[k] += g[k]
        dh = g["h_prev"]
        dxs[t] = g["x"]
    return grads, dxs


def _init_state(init, i, side_slice, shape, which):
    if init is None:
        return np.zeros(shape)
    vals = init.h if which == "h" else init.c
    if vals is None:
        return np.zeros(shape)
    return np.broadcast_to(np.asarray(vals[i], dtype=float)[..., side_slice], shape)


def bptt(net: SeqNet, xs, labels, mask, loss_kind: str = "ce",
         init: InitialState | None = None, return_traj: bool = False):
    """Loss and exact gradients over a whole (padded) sequence batch.

    ``labels`` and ``mask`` are aligned with the inputs (``T`` steps); the
    first ``net.delay`` outputs never enter the loss. Returns
    ``(loss, grads)`` (plus the trajectory when ``return_traj``), with
    ``grads`` keyed like :meth:`SeqNet.parameters`.
    """
    xs = np.asarray(xs, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != xs.shape[:-1]:
        raise ValueError(f"mask shape {mask.shape} != input positions {xs.shape[:-1]}")
    weights = _weights(mask.reshape(mask.shape[0], -1)).reshape(mask.shape)
    traj = net.forward(xs, init, keep=True)
    pos_loss, dlogits = _position_loss(traj, labels, loss_kind)
    loss = float(np.sum(pos_loss * weights))
    dlogits = dlogits * weights[..., None]
    if loss_kind == "mse" and net.output.g.kind != "identity":
        dlogits = dlogits * net.output.g.grad_from_output(traj.delayed_outputs)

    d = net.delay
    top = traj.hidden[-1]
    grads = {}
    flat_dl = dlogits.reshape(-1, dlogits.shape[-1])
    grads["output.w_o"] = flat_dl.T @ top[d:].reshape(-1, top.shape[-1])
    grads["output.b_o"] = flat_dl.sum(axis=0)
    dh = np.zeros_like(top)
    dh[d:] = dlogits @ net.output.w_o

    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        n = layer.fwd.n
        inputs = traj.cache[i]["inputs"]
        hs_all = traj.hidden[i]
        cs_all = traj.cell[i] if traj.cell is not None else None
        dx_total = None
        for j, (side, cell) in enumerate(layer.cells()):
            sl = slice(j * n, (j + 1) * n)
            state_shape = hs_all.shape[1:-1] + (n,)
            g, dxs = layer_backward(
                cell, inputs, hs_all[..., sl],
                None if cs_all is None else cs_all[..., sl],
                traj.cache[i]["gates"][j],
                _init_state(init, i, sl, state_shape, "h"),
                _init_state(init, i, sl, state_shape, "c") if layer.is_lstm else None,
                dh[..., sl], reverse=(side == "bwd"))
            for k, v in g.items():
                grads[f"layers.{i}.{side}.{k}"] = v
            dx_total = dxs if dx_total is None else dx_total + dxs
        dh = dx_total

    ordered = {k: grads[k] for k in net.parameters()}
    if return_traj:
        return loss, ordered, traj
    return loss, ordered


# ---------------------------------------------------------------- optimisation

def global_norm(grads: dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def clip_gradients(grads: dict[str, np.ndarray], clip_norm: float) -> dict[str, np.ndarray]:
    """Rescale so the global L2 norm is at most ``clip_norm``."""
    if clip_norm <= 0:
        raise ValueError("clip_norm must be positive")
    norm = global_norm(grads)
    if norm <= clip_norm:
        return dict(grads)
    scale = clip_norm / norm
    return {k: g * scale for k, g in grads.items()}


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    clip_norm: float = 1.0
    batch_size: int = 100
    max_epochs: int = 1000
    early_stop_patience: int = 10
    early_stop_delta: float = 1e-3
    stop_below_val_loss: float | None = None
    seed: int = 0
    eval_batch_size: int = 500

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("betas must lie in (0, 1)")
        if self.learning_rate <= 0 or self.clip_norm <= 0:
            raise ValueError("learning_rate and clip_norm must be positive")
        if self.batch_size < 1 or self.max_epochs < 0:
            raise ValueError("batch_size must be >= 1 and max_epochs >= 0")


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, cfg: TrainConfig):
    """Bias-corrected Adam update, applied to ``params`` in place."""
    state.step += 1
    t = state.step
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t
    for k, p in params.items():
        g = grads[k]
        m = state.m[k]
        v = state.v[k]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        p -= cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.epsilon)
    return params, state


# ---------------------------------------------------------------- evaluation

def metric_stats(traj, labels, mask, metric: str) -> tuple[float, float]:
    """``(numerator, denominator)`` accumulators for a task metric."""
    mask = np.asarray(mask, dtype=bool)
    count = float(mask.sum())
    if metric == "accuracy":
        pred = np.argmax(traj.delayed_outputs, axis=-1)
        return float(np.sum((pred == labels) & mask)), count
    if metric == "bpc":
        loss, _ = softmax_cross_entropy(traj.delayed_logits, labels)
        return float(np.sum(loss * mask)) / LN2, count
    if metric == "mse":
        out = traj.delayed_outputs
        sq = ((out - np.asarray(labels, dtype=float).reshape(out.shape)) ** 2).mean(axis=-1)
        return float(np.sum(sq * mask)), count
    raise ValueError(f"unknown metric {metric!r}")


def evaluate(net: SeqNet, split, data, batch_size: int = 500) -> dict[str, float]:
    """Mean loss (training reduction) and task metric over a split."""
    loss_sum, n_seq, num, den = 0.0, 0, 0.0, 0.0
    for start in range(0, len(split), batch_size):
        idx = np.arange(start, min(start + batch_size, len(split)))
        xs, labels, mask = split.batch(idx, data.input_dim)
        traj = net.forward(xs)
        pos_loss, _ = _position_loss(traj, labels, data.loss_kind)
        counts = mask.sum(axis=0)
        valid = counts > 0
        per_seq = (pos_loss * mask).sum(axis=0)[valid] / counts[valid]
        loss_sum += float(per_seq.sum())
        n_seq += int(valid.sum())
        a, b = metric_stats(traj, labels, mask, data.metric)
        num += a
        den += b
    if n_seq == 0 or den == 0:
        raise ValueError("evaluation split has no masked positions")
    return {"loss": loss_sum / n_seq, "metric": num / den}


@dataclass
class History:
    rows: list[dict] = field(default_factory=list)
    best_epoch: int | None = None
    stopped: str = ""
    final: SeqNet | None = None

    def __len__(self):
        return len(self.rows)

    def values(self, split: str, key: str = "loss") -> list[float]:
        return [r[key] for r in self.rows if r["split"] == split]


def train_loop(net: SeqNet, data, cfg: TrainConfig,
               on_epoch: Callable[[list[dict]], None] | None = None) -> tuple[SeqNet, History]:
    """Mini-batch Adam with clipping, per-epoch validation and early stopping.

    Returns a copy of the network at its best validation loss, and the
    history (one row per epoch and split).
    """
    train, val = data.splits.get("train"), data.splits.get("val")
    if train is None or val is None or len(train) == 0 or len(val) == 0:
        raise ValueError("dataset needs non-empty train and val splits")
    history = History()
    net = net.copy()
    best = net.copy()
    if cfg.max_epochs == 0:
        history.stopped = "max_epochs"
        history.final = best
        return best, history

    params = net.parameters()
    state = AdamState.zeros_like(params)
    rng = Rng(cfg.seed).child(0xB47C)
    best_loss = math.inf
    ref_loss = math.inf
    wait = 0
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(train))
        loss_sum, n_batches, num, den = 0.0, 0, 0.0, 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xs, labels, mask = train.batch(idx, data.input_dim)
            if not mask.any():
                continue
            loss, grads, traj = bptt(net, xs, labels, mask, data.loss_kind, return_traj=True)
            a, b = metric_stats(traj, labels, mask, data.metric)
            num += a
            den += b
            adam_step(params, clip_gradients(grads, cfg.clip_norm), state, cfg)
            loss_sum += loss
            n_batches += 1
        train_ms = (time.perf_counter() - t0) * 1e3
        t1 = time.perf_counter()
        ev = evaluate(net, val, data, cfg.eval_batch_size)
        val_ms = (time.perf_counter() - t1) * 1e3
        rows = [
            {"epoch": epoch, "split": "train", "loss": loss_sum / max(n_batches, 1),
             "metric_name": data.metric, "metric_value": num / den if den else math.nan,
             "wall_ms": train_ms},
            {"epoch": epoch, "split": "val", "loss": ev["loss"], "metric_name": data.metric,
             "metric_value": ev["metric"], "wall_ms": val_ms},
        ]
        history.rows.extend(rows)
        if on_epoch is not None:
            on_epoch(rows)
        log.info("epoch %d train %.5f val %.5f %s %.4f", epoch, rows[0]["loss"],
                 ev["loss"], data.metric, ev["metric"])

        if ev["loss"] < best_loss:
            best_loss = ev["loss"]
            best = net.copy()
            history.best_epoch = epoch
        if ev["loss"] < ref_loss - cfg.early_stop_delta:
            ref_loss = ev["loss"]
            wait = 0
        else:
            wait += 1
        if cfg.stop_below_val_loss is not None and ev["loss"] < cfg.stop_below_val_loss:
            history.stopped = "below_threshold"
            break
        if wait >= cfg.early_stop_patience:
            history.stopped = "patience"
            break
    else:
        history.stopped = "max_epochs"
    history.final = net
    return best, history
