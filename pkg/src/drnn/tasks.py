"""Synthetic and text tasks: sequence reversal, sine filter, masked character LM."""
from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .linalg import Rng


@dataclass
class Split:
    """One data split, stored batch-major.

    ``inputs`` is ``(N, T)`` integer tokens or ``(N, T, q)`` floats;
    ``labels`` is ``(N, T)`` class ids or ``(N, T, m)`` targets; ``mask`` is
    ``(N, T)`` and selects the positions that enter the loss.
    """

    inputs: np.ndarray
    labels: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        n, t = self.mask.shape
        if self.inputs.shape[:2] != (n, t) or self.labels.shape[:2] != (n, t):
            raise ValueError("inputs, labels and mask disagree on (N, T)")

    def __len__(self) -> int:
        return self.mask.shape[0]

    def batch(self, idx, input_dim: int):
        """Time-major ``(xs, labels, mask)`` for rows ``idx``; tokens become one-hot."""
        idx = np.asarray(idx)
        inp = self.inputs[idx]
        if inp.ndim == 2:
            xs = np.zeros(inp.shape + (input_dim,))
            np.put_along_axis(xs, inp[..., None].astype(np.intp), 1.0, axis=-1)
        else:
            xs = inp.astype(float)
        return (np.ascontiguousarray(np.swapaxes(xs, 0, 1)),
                np.ascontiguousarray(np.swapaxes(self.labels[idx], 0, 1)),
                np.ascontiguousarray(self.mask[idx].T))


@dataclass
class TaskDataset:
    name: str
    input_dim: int
    output_dim: int
    loss_kind: str  # "ce" or "mse"
    metric: str  # "accuracy", "mse" or "bpc"
    splits: dict[str, Split]
    meta: dict = field(default_factory=dict)

    @property
    def output_activation(self) -> str:
        return "softmax" if self.loss_kind == "ce" else "identity"


# ---------------------------------------------------------------- reversal

def _unique_rows(rng: Rng, n: int, t: int, v: int, taken: set, attempts: int = 100):
    """``n`` random token rows, none of which appears in ``taken``."""
    rows = rng.integers(0, v, (n, t))
    for _ in range(attempts):
        bad = [i for i, r in enumerate(rows) if r.tobytes() in taken]
        if not bad:
            return rows
        rows[bad] = rng.integers(0, v, (len(bad), t))
    raise ValueError(f"cannot draw {n} sequences disjoint from earlier splits "
                     f"(only {v}**{t} distinct sequences)")


def gen_reversal(rng: Rng, n_train: int = 10000, n_val: int = 2000, n_test: int = 2000,
                 T: int = 20, V: int = 4) -> TaskDataset:
    """Token sequences whose label at step ``t`` is the input at ``T + 1 - t``.

    Validation and test rows never repeat a sequence from an earlier split.
    """
    if T < 1 or V < 1:
        raise ValueError("T and V must be >= 1")
    splits, taken = {}, set()
    for name, n in (("train", n_train), ("val", n_val), ("test", n_test)):
        rows = _unique_rows(rng, n, T, V, taken) if taken else rng.integers(0, V, (n, T))
        taken.update(r.tobytes() for r in rows)
        splits[name] = Split(rows.astype(np.int64), rows[:, ::-1].astype(np.int64),
                             np.ones((n, T), dtype=bool))
    return TaskDataset("reversal", V, V, "ce", "accuracy", splits, {"T": T, "V": V})


def expected_reversal_tpr(T: int, V: int, d: int) -> float:
    """Accuracy of the best predictor that sees ``x_1 .. x_{t+d}`` at step ``t``.

    Position ``t`` is answerable iff its mirror ``T + 1 - t`` has been read;
    the rest are guessed with success ``1/V``. Capped at 1.
    """
    if T < 1 or V < 1 or d < 0:
        raise ValueError("need T >= 1, V >= 1, d >= 0")
    tpr = 0.5 * (1 + 1 / V) + ((d + 1) // 2) * (1 / T) * (1 - 1 / V)
    return min(1.0, tpr)


def reversal_tpr_bruteforce(T: int, V: int, d: int) -> float:
    """Same quantity by counting answerable positions directly."""
    seen = sum(1 for t in range(1, T + 1) if T + 1 - t <= t + d)
    return (seen + (T - seen) / V) / T


# ---------------------------------------------------------------- sine filter

@dataclass(frozen=True)
class SineTaskSpec:
    """Filter reaching ``a`` steps ahead and ``c - 1`` steps back; ``len(w) == a + c``."""

    T: int = 50
    a: int = 8
    c: int = 12
    gamma: float = 2.0

    def __post_init__(self):
        if self.a < 0 or self.c < 0 or self.a + self.c < 1 or self.T < 1:
            raise ValueError("need a >= 0, c >= 0, a + c >= 1, T >= 1")

    @property
    def filter_len(self) -> int:
        return self.a + self.c


def sine_labels(x: np.ndarray, w: np.ndarray, spec: SineTaskSpec) -> np.ndarray:
    """``y_t = sin(gamma * sum_{j=-c+1}^{a} w_{j+c} x_{t+j})``, zero outside [1, T].

    ``x`` is ``(N, T)``; ``w`` is indexed from 1 as written, so ``w[j + c - 1]``
    in zero-based terms.
    """
    x = np.asarray(x, dtype=float)
    T = x.shape[1]
    acc = np.zeros_like(x)
    for j in range(-spec.c + 1, spec.a + 1):
        lo, hi = max(0, -j), min(T, T - j)
        if lo < hi:
            acc[:, lo:hi] += w[j + spec.c - 1] * x[:, lo + j:hi + j]
    return np.sin(spec.gamma * acc)


def gen_sine(rng: Rng, spec: SineTaskSpec = SineTaskSpec(), n_train: int = 2000,
             n_val: int = 500, n_test: int = 500, w: np.ndarray | None = None) -> TaskDataset:
    """Uniform ``[0, 1)`` inputs filtered by ``w`` and passed through a sine."""
    if w is None:
        w = rng.uniform(0.0, 1.0, (spec.filter_len,))
    w = np.asarray(w, dtype=float)
    if w.shape != (spec.filter_len,):
        raise ValueError(f"filter must have {spec.filter_len} entries")
    splits = {}
    for name, n in (("train", n_train), ("val", n_val), ("test", n_test)):
        x = rng.uniform(0.0, 1.0, (n, spec.T))
        y = sine_labels(x, w, spec)
        splits[name] = Split(x[..., None], y[..., None], np.ones((n, spec.T), dtype=bool))
    meta = {"T": spec.T, "a": spec.a, "c": spec.c, "gamma": spec.gamma, "filter": w.tolist()}
    return TaskDataset("sine", 1, 1, "mse", "mse", splits, meta)


# ---------------------------------------------------------------- masked character LM

class CharVocab:
    """27 symbols ``a``-``z`` and space, plus a mask token used only as input."""

    alphabet = "abcdefghijklmnopqrstuvwxyz "
    size = 27
    mask_id = 27
    input_size = 28

    def __init__(self):
        self._ids = {ch: i for i, ch in enumerate(self.alphabet)}

    def encode(self, text: str) -> np.ndarray:
        try:
            return np.fromiter((self._ids[ch] for ch in text), dtype=np.int64, count=len(text))
        except KeyError as exc:
            raise ValueError(f"character {exc.args[0]!r} outside the alphabet") from None

    def decode(self, ids) -> str:
        return "".join("_" if i == self.mask_id else self.alphabet[i] for i in ids)


_NON_ALPHA = re.compile(r"[^a-z]")
_NON_ALPHA_RUN = re.compile(r"[^a-z]+")


def normalize_text(text: str, collapse: bool = False) -> str:
    """Lowercase and map every character outside ``a``-``z`` to a space.

    With ``collapse=True`` runs of such characters become a single space.
    """
    pattern = _NON_ALPHA_RUN if collapse else _NON_ALPHA
    return pattern.sub(" ", text.lower())


def mask_tokens(rng: Rng, tokens: np.ndarray, mask_prob: float):
    """Replace each token with the mask id independently with ``mask_prob``."""
    if not 0.0 <= mask_prob < 1.0:
        raise ValueError("mask_prob must lie in [0, 1)")
    masked = rng.random(tokens.shape) < mask_prob
    return np.where(masked, CharVocab.mask_id, tokens), masked


def gen_masked_corpus(rng: Rng, text: str, mask_prob: float = 0.2, seq_len: int = 180,
                      fractions=(0.9, 0.05, 0.05)) -> TaskDataset:
    """Split ``text`` contiguously, cut into sequences, and mask characters.

    The loss covers masked positions only; labels are the original
    characters everywhere.
    """
    vocab = CharVocab()
    tokens = vocab.encode(text)
    if abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise ValueError("split fractions must be non-negative and sum to 1")
    if seq_len < 1:
        raise ValueError("seq_len must be >= 1")
    bounds = np.round(np.cumsum((0,) + tuple(fractions)) * len(tokens)).astype(int)
    splits = {}
    for name, lo, hi in zip(("train", "val", "test"), bounds[:-1], bounds[1:]):
        n_seq = (hi - lo) // seq_len
        part = tokens[lo:lo + n_seq * seq_len].reshape(n_seq, seq_len)
        inputs, masked = mask_tokens(rng, part, mask_prob)
        splits[name] = Split(inputs, part.copy(), masked)
    meta = {"mask_prob": mask_prob, "seq_len": seq_len, "chars": len(tokens)}
    return TaskDataset("masked_lm", vocab.input_size, vocab.size, "ce", "bpc", splits, meta)


# ---------------------------------------------------------------- metrics

def per_token_accuracy(preds, labels, mask) -> float:
    """Fraction of masked positions whose argmax matches the label.

    Ties go to the lowest class index.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("mask selects no positions")
    hit = (np.argmax(preds, axis=-1) == np.asarray(labels)) & mask
    return float(hit.sum() / mask.sum())


__all__ = [
    "Split", "TaskDataset", "gen_reversal", "expected_reversal_tpr", "reversal_tpr_bruteforce",
    "SineTaskSpec", "sine_labels", "gen_sine", "CharVocab", "normalize_text", "mask_tokens",
    "gen_masked_corpus", "per_token_accuracy",
]
