"""Sequence kernels: time reversal, convolution, cross-correlation and
recursive IIR filtering from rest.

Vectors are 1-D float64 arrays indexed from 0. Time series with several
channels are time-major ``(T, c)`` arrays.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import NumericalRangeError, ShapeError


@dataclass(frozen=True)
class TransferFunction:
    """SISO rational operator ``B(q)/A(q)``.

    ``b`` holds ``b_0 .. b_{n_b}``; ``a`` holds ``a_1 .. a_{n_a}`` (the
    leading 1 of ``A(q)`` is implicit). An empty ``a`` is a FIR filter.
    """

    b: np.ndarray
    a: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        b = np.atleast_1d(np.asarray(self.b, dtype=np.float64))
        a = np.atleast_1d(np.asarray(self.a, dtype=np.float64)) if np.size(self.a) else np.zeros(0)
        if b.ndim != 1 or b.size < 1:
            raise ShapeError(f"numerator must be a non-empty vector, got shape {b.shape}")
        if a.ndim != 1:
            raise ShapeError(f"denominator must be a vector, got shape {a.shape}")
        if not (np.all(np.isfinite(b)) and np.all(np.isfinite(a))):
            raise ValueError("transfer function coefficients must be finite")
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "a", a)

    @property
    def n_b(self) -> int:
        return self.b.size - 1

    @property
    def n_a(self) -> int:
        return self.a.size

    @property
    def is_fir(self) -> bool:
        return self.a.size == 0

    def __eq__(self, other):
        if not isinstance(other, TransferFunction):
            return NotImplemented
        return np.array_equal(self.b, other.b) and np.array_equal(self.a, other.a)

    def __hash__(self):
        return hash((self.b.tobytes(), self.a.tobytes()))


class MulCounter:
    """Accumulates the number of multiplications executed by the filter kernel."""

    def __init__(self):
        self.count = 0

    def reset(self):
        self.count = 0


def as_vector(v, name="v") -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size < 1:
        raise ShapeError(f"{name} must be a non-empty 1-D vector, got shape {v.shape}")
    return v


def as_series(x, name="x") -> np.ndarray:
    """Coerce to a time-major ``(T, c)`` float64 array; 1-D input becomes one channel."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise ShapeError(f"{name} must be a (T, c) array with T, c >= 1, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite entries")
    return x


def flip(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape[0] < 1:
        raise ShapeError("cannot flip an empty vector")
    return v[::-1].copy()


def convolve(x, y) -> np.ndarray:
    """Full linear convolution, length ``n_x + n_y - 1``."""
    x = as_vector(x, "x")
    y = as_vector(y, "y")
    return np.convolve(x, y)


def cross_correlate(x, y) -> np.ndarray:
    """``(x ⋆ y)_i = sum_j x_{j-i} y_j`` for lags ``i = -n_x+1 .. n_y-1``.

    Entry ``k`` of the result holds lag ``i = k - n_x + 1``; the
    non-negative lags are ``result[n_x - 1:]``.
    """
    x = as_vector(x, "x")
    y = as_vector(y, "y")
    return np.convolve(x[::-1], y)


@numba.njit(cache=True)
def _filter_bank(bt, at, u):
    # bt: (n_b+1, k), at: (n_a, k), u: (T, k); column c is filtered by column c
    # of bt, at. Histories are zero-padded in front (rest initial condition),
    # so every step runs all n_b + n_a + 1 products. Channels are independent
    # and sit in the innermost loop.
    T, k = u.shape
    nb = bt.shape[0] - 1
    na = at.shape[0]
    up = np.zeros((T + nb, k))
    up[nb:] = u
    yp = np.zeros((T + na, k))
    acc = np.empty(k)
    mults = 0
    for t in range(T):
        acc[:] = 0.0
        for j in range(nb + 1):
            row = up[t + nb - j]
            for c in range(k):
                acc[c] += bt[j, c] * row[c]
            mults += k
        for j in range(1, na + 1):
            row = yp[t + na - j]
            for c in range(k):
                acc[c] -= at[j - 1, c] * row[c]
            mults += k
        yp[t + na] = acc
    return yp[na:], mults


@numba.njit(cache=True)
def _filter_one(b, a, u):
    # Single-channel version of _filter_bank with scalar accumulation.
    T = u.shape[0]
    nb = b.shape[0] - 1
    na = a.shape[0]
    up = np.zeros(T + nb)
    up[nb:] = u
    yp = np.zeros(T + na)
    mults = 0
    for t in range(T):
        acc = 0.0
        for j in range(nb + 1):
            acc += b[j] * up[t + nb - j]
            mults += 1
        for j in range(1, na + 1):
            acc -= a[j - 1] * yp[t + na - j]
            mults += 1
        yp[t + na] = acc
    return yp[na:], mults


def filter_bank(b, a, u, counter: MulCounter | None = None) -> np.ndarray:
    """Filter each column of ``u`` through its own transfer function.

    ``b`` is ``(k, n_b+1)``, ``a`` is ``(k, n_a)`` and ``u`` is ``(T, k)``.
    Raises :class:`NumericalRangeError` if the output is not finite.
    """
    b = np.ascontiguousarray(b, dtype=np.float64)
    a = np.ascontiguousarray(a, dtype=np.float64)
    u = np.ascontiguousarray(u, dtype=np.float64)
    if a.ndim == 2 and a.shape[1] == 0:
        a = np.zeros((b.shape[0], 0))
    if not (b.ndim == a.ndim == u.ndim == 2 and b.shape[0] == a.shape[0] == u.shape[1]):
        raise ShapeError(f"inconsistent filter bank shapes b{b.shape} a{a.shape} u{u.shape}")
    if u.shape[1] == 1:
        y, mults = _filter_one(b[0], a[0], u[:, 0])
        y = y[:, None]
    else:
        y, mults = _filter_bank(np.ascontiguousarray(b.T), np.ascontiguousarray(a.T), u)
    if counter is not None:
        counter.count += mults
    if not np.all(np.isfinite(y)):
        bad = int(np.argmax(~np.all(np.isfinite(y), axis=1)))
        raise NumericalRangeError(f"filter output left the floating-point range at t={bad}", index=bad)
    return y


def iir_filter(tf: TransferFunction, u, counter: MulCounter | None = None) -> np.ndarray:
    """Run the recurrence ``y(t) = sum_k b_k u(t-k) - sum_k a_k y(t-k)`` from rest."""
    u = as_vector(u, "u")
    return filter_bank(tf.b[None, :], tf.a[None, :], u[:, None], counter)[:, 0]


def impulse_response(tf: TransferFunction, T: int) -> np.ndarray:
    if T < 1:
        raise ValueError("T must be >= 1")
    delta = np.zeros(T)
    delta[0] = 1.0
    return iir_filter(tf, delta)
