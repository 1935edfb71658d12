"""Dense linear algebra helpers and seeded randomness.

Vectors and matrices are plain float64 numpy arrays. The helpers here only
add the dimension checks and error reporting the rest of the package relies
on.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg

DTYPE = np.float64


class DimensionError(ValueError):
    """Raised when operand shapes do not line up."""


class RankDeficientError(np.linalg.LinAlgError):
    """Least-squares system is rank deficient and cannot be solved exactly."""

    def __init__(self, message: str, rank: int, residual: float):
        super().__init__(message)
        self.rank = rank
        self.residual = residual


def as_vector(v, name: str = "v") -> np.ndarray:
    v = np.asarray(v, dtype=DTYPE)
    if v.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} has non-finite entries")
    return v


def as_matrix(m, name: str = "m") -> np.ndarray:
    m = np.asarray(m, dtype=DTYPE)
    if m.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} has non-finite entries")
    return m


def matvec(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Return ``m @ v`` after checking ``m.cols == v.len``."""
    m = as_matrix(m, "m")
    v = as_vector(v, "v")
    if m.shape[1] != v.shape[0]:
        raise DimensionError(f"matvec: {m.shape} x {v.shape}")
    return m @ v


def least_squares_solve(a: np.ndarray, b: np.ndarray, *, rcond: float = 1e-12,
                        residual_tol: float = 1e-8) -> tuple[np.ndarray, float]:
    """Minimum-norm least-squares solution of ``a x = b`` via pivoted QR.

    Columns whose R diagonal falls below ``rcond * |R[0, 0]|`` are treated as
    dependent and their coefficients set to zero. Returns ``(x, residual)``
    with ``residual = ||a x - b||_2``. A rank-deficient system whose residual
    exceeds ``residual_tol * max(1, ||b||)`` raises :class:`RankDeficientError`,
    since then no exact preimage exists.
    """
    a = as_matrix(a, "a")
    b = as_vector(b, "b")
    if a.shape[0] != b.shape[0]:
        raise DimensionError(f"least_squares_solve: a is {a.shape}, b has {b.shape[0]} rows")
    n = a.shape[1]
    q, r, piv = scipy.linalg.qr(a, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int(np.sum(diag > rcond * diag[0])) if diag.size and diag[0] > 0 else 0
    qtb = q.T @ b
    z = np.zeros(n)
    if rank:
        z[:rank] = scipy.linalg.solve_triangular(r[:rank, :rank], qtb[:rank])
    x = np.empty(n)
    x[piv] = z
    residual = float(np.linalg.norm(a @ x - b))
    if rank < n and residual > residual_tol * max(1.0, float(np.linalg.norm(b))):
        raise RankDeficientError(
            f"rank {rank} < {n} and residual {residual:.3e} above tolerance",
            rank=rank, residual=residual)
    return x, residual


class Rng:
    """Seeded random stream.

    Backed by numpy's PCG64 bit generator, whose output for a given seed is
    fixed across platforms and numpy releases.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, lo: float, hi: float, shape=()) -> np.ndarray:
        return uniform_fill(self, lo, hi, shape)

    def integers(self, lo: int, hi: int, shape=()) -> np.ndarray:
        return self._gen.integers(lo, hi, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def random(self, shape=()) -> np.ndarray:
        return self._gen.random(shape)

    def normal(self, shape=()) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def child(self, *keys: int) -> "Rng":
        """Independent stream derived from this seed and ``keys``."""
        ss = np.random.SeedSequence([self.seed, *keys])
        return Rng(int(ss.generate_state(1, dtype=np.uint64)[0]))


def uniform_fill(rng: Rng, lo: float, hi: float, shape=()) -> np.ndarray:
    """Array of ``shape`` with entries drawn uniformly from ``[lo, hi)``."""
    if not lo < hi:
        raise ValueError(f"uniform_fill needs lo < hi, got [{lo}, {hi})")
    out = lo + (hi - lo) * rng._gen.random(shape)
    # lo + (hi-lo)*u can round up to hi when hi-lo is tiny relative to lo
    return np.where(out >= hi, np.nextafter(hi, lo), out)
