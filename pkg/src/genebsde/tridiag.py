"""Batched tridiagonal solves along one axis of an n-d array.

The matrix is shared by every line, so the Thomas elimination is factored
once and replayed over all right-hand sides at the same time.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
from numba import njit, prange


@dataclass(frozen=True)
class TridiagonalFactor:
    """Thomas factorization of a tridiagonal matrix.

    ``sub[i]`` is the multiplier applied to row ``i - 1`` when eliminating
    row ``i``; ``upper_scaled`` and ``pivot`` give the back substitution.
    """

    sub: np.ndarray
    pivot: np.ndarray
    upper_scaled: np.ndarray

    @property
    def size(self) -> int:
        return self.pivot.size


def factor_tridiagonal(lower, diag, upper) -> TridiagonalFactor:
    """Factor the matrix with sub-diagonal ``lower`` (len n-1), ``diag`` (len n)
    and super-diagonal ``upper`` (len n-1). No pivoting; the matrix should be
    diagonally dominant."""
    lower = np.asarray(lower, dtype=float)
    diag = np.asarray(diag, dtype=float)
    upper = np.asarray(upper, dtype=float)
    n = diag.size
    if lower.size != n - 1 or upper.size != n - 1:
        raise ValueError("off-diagonals must have length n - 1")
    pivot = np.empty(n)
    cp = np.zeros(n)
    sub = np.zeros(n)
    pivot[0] = diag[0]
    for i in range(1, n):
        if pivot[i - 1] == 0.0:
            raise ZeroDivisionError(f"zero pivot at row {i - 1}")
        sub[i] = lower[i - 1] / pivot[i - 1]
        pivot[i] = diag[i] - sub[i] * upper[i - 1]
    if pivot[-1] == 0.0:
        raise ZeroDivisionError("singular tridiagonal matrix")
    cp[:-1] = upper / pivot[:-1]
    return TridiagonalFactor(sub=sub, pivot=pivot, upper_scaled=cp)


@njit(parallel=True, cache=True)
def _solve_lines(sub, pivot, upper_scaled, d):
    # d has shape (pre, n, post); every (pre, post) pair is one line, solved in place
    pre, n, post = d.shape
    for q in prange(pre * post):
        a = q // post
        b = q - a * post
        for i in range(1, n):
            d[a, i, b] -= sub[i] * d[a, i - 1, b]
        d[a, n - 1, b] /= pivot[n - 1]
        for i in range(n - 2, -1, -1):
            d[a, i, b] = d[a, i, b] / pivot[i] - upper_scaled[i] * d[a, i + 1, b]


def as_lines(x: np.ndarray, axis: int) -> np.ndarray:
    """View ``x`` as ``(pre, len, post)`` around ``axis`` (no copy for C-contiguous input)."""
    axis = axis % x.ndim
    pre = int(np.prod(x.shape[:axis], dtype=np.int64))
    post = int(np.prod(x.shape[axis + 1 :], dtype=np.int64))
    return x.reshape(pre, x.shape[axis], post)


def set_threads(threads: int) -> None:
    numba.set_num_threads(max(1, min(int(threads), numba.config.NUMBA_NUM_THREADS)))


def solve_along_axis(f: TridiagonalFactor, rhs: np.ndarray, axis: int = 0, threads: int = 1, overwrite: bool = False) -> np.ndarray:
    """Solve ``M x = rhs`` for every line of ``rhs`` along ``axis``.

    Lines are independent, so the output is bit-identical for any thread count.
    """
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape[axis] != f.size:
        raise ValueError(f"axis length {rhs.shape[axis]} != matrix size {f.size}")
    out = rhs if (overwrite and rhs.flags.c_contiguous) else np.array(rhs, order="C", copy=True)
    set_threads(threads)
    _solve_lines(f.sub, f.pivot, f.upper_scaled, as_lines(out, axis))
    return out
