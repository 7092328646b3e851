"""Differentiable linear dynamical operator (G-block).

Forward pass filters the input through ``B(q)/A(q)`` from rest. The
backward passes are closed form:

* numerator: filter ``u`` once through ``1/A(q)`` and take shifted dot
  products with the output adjoint;
* denominator: filter ``y`` once through ``-1/A(q)`` and take shifted dot
  products likewise;
* input: filter the time-reversed output adjoint through ``G(q)`` and
  reverse the result (linear in ``T``).

MIMO operators are ``m x p`` grids of SISO entries sharing ``n_a``/``n_b``;
coefficients are stored as arrays ``b: (m, p, n_b+1)`` and ``a: (m, p, n_a)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import ShapeError
from .signal_core import (
    MulCounter,
    TransferFunction,
    as_vector,
    cross_correlate,
    filter_bank,
    iir_filter,
)


@dataclass
class GBlockParams:
    tf: TransferFunction
    train_b: bool = True
    train_a: bool = True

    @classmethod
    def integrator(cls):
        return cls(TransferFunction([1.0], [-1.0]), train_b=False, train_a=False)


@dataclass
class GradientBundle:
    b_bar: np.ndarray
    a_bar: np.ndarray
    u_bar: np.ndarray


@dataclass
class MimoOperator:
    b: np.ndarray  # (m, p, n_b + 1)
    a: np.ndarray = field(default=None)  # (m, p, n_a)

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.b.ndim != 3 or self.b.shape[2] < 1:
            raise ShapeError(f"numerator grid must be (m, p, n_b+1), got {self.b.shape}")
        if self.a is None:
            self.a = np.zeros(self.b.shape[:2] + (0,))
        self.a = np.asarray(self.a, dtype=np.float64)
        if self.a.ndim != 3 or self.a.shape[:2] != self.b.shape[:2]:
            raise ShapeError(f"denominator grid {self.a.shape} does not match numerator grid {self.b.shape}")

    @classmethod
    def from_grid(cls, grid):
        """Build from a nested list ``grid[k][h]`` of :class:`TransferFunction`."""
        m, p = len(grid), len(grid[0])
        if any(len(row) != p for row in grid):
            raise ShapeError("ragged transfer-function grid")
        nb = {tf.n_b for row in grid for tf in row}
        na = {tf.n_a for row in grid for tf in row}
        if len(nb) != 1 or len(na) != 1:
            raise ShapeError("all grid entries must share n_a and n_b")
        b = np.array([[tf.b for tf in row] for row in grid]).reshape(m, p, -1)
        a = np.array([[tf.a for tf in row] for row in grid]).reshape(m, p, -1)
        return cls(b, a)

    @property
    def m(self) -> int:
        return self.b.shape[0]

    @property
    def p(self) -> int:
        return self.b.shape[1]

    def entry(self, k, h) -> TransferFunction:
        return TransferFunction(self.b[k, h], self.a[k, h])


# SISO -----------------------------------------------------------------------

def gblock_forward(u, params, counter: MulCounter | None = None) -> np.ndarray:
    tf = params.tf if isinstance(params, GBlockParams) else params
    return iir_filter(tf, u, counter)


@numba.njit(cache=True)
def _shifted_dots_kernel(y_bar, s, n):
    # y_bar, s: (k, T) rows; out[j, c] = sum_{t >= j} y_bar[c, t] s[c, t - j]
    k, T = y_bar.shape
    out = np.zeros((n, k))
    for c in range(k):
        for j in range(min(n, T)):
            acc = 0.0
            for t in range(j, T):
                acc += y_bar[c, t] * s[c, t - j]
            out[j, c] = acc
    return out


def _shifted_dots(y_bar, s, n):
    """``out_j = sum_{t >= j} y_bar_t s_{t-j}`` for ``j < n`` (column-wise for 2-D)."""
    if y_bar.ndim == 1:
        return _shifted_dots(y_bar[:, None], s[:, None], n)[:, 0]
    return _shifted_dots_kernel(np.ascontiguousarray(y_bar.T), np.ascontiguousarray(s.T), n)


def gblock_backward(u, y, params, y_bar) -> GradientBundle:
    """All three adjoints of a SISO block given its input, output and ``y_bar``."""
    tf = params.tf if isinstance(params, GBlockParams) else params
    return GradientBundle(
        b_bar=gblock_backward_b(u, tf.a, y_bar, tf.n_b),
        a_bar=gblock_backward_a(y, tf.a, y_bar),
        u_bar=gblock_backward_u(tf, y_bar),
    )


def gblock_backward_b(u, a, y_bar, n_b) -> np.ndarray:
    """``b_bar_j = sum_{t=j}^{T-1} y_bar_t s_{t-j}`` with ``s = u / A(q)``."""
    u = as_vector(u, "u")
    y_bar = as_vector(y_bar, "y_bar")
    _check_len(u, y_bar)
    s = iir_filter(TransferFunction([1.0], a), u)
    return _shifted_dots(y_bar, s, n_b + 1)


def gblock_backward_a(y, a, y_bar) -> np.ndarray:
    """``a_bar_j = sum_{t=j}^{T-1} y_bar_t s_{t-j}`` with ``s = -y / A(q)``.

    ``s`` here is the undelayed filtered output, so the sensitivity of
    ``y_t`` to ``a_j`` is ``s_{t-j}``.
    """
    y = as_vector(y, "y")
    y_bar = as_vector(y_bar, "y_bar")
    _check_len(y, y_bar)
    a = np.asarray(a, dtype=np.float64)
    if a.size == 0:
        return np.zeros(0)
    s = iir_filter(TransferFunction([-1.0], a), y)
    return _shifted_dots(y_bar, s, a.size + 1)[1:]


def gblock_backward_u(params, y_bar) -> np.ndarray:
    """Input adjoint: reverse ``y_bar``, filter through ``G(q)``, reverse again."""
    tf = params.tf if isinstance(params, GBlockParams) else params
    y_bar = as_vector(y_bar, "y_bar")
    return iir_filter(tf, y_bar[::-1])[::-1].copy()


def fir_forward(u, b) -> np.ndarray:
    u = as_vector(u, "u")
    b = as_vector(b, "b")
    return np.convolve(b, u)[: u.size]


def fir_backward(u, b, y_bar):
    """Returns ``(b_bar, u_bar)`` via non-negative-lag cross-correlations."""
    u = as_vector(u, "u")
    b = as_vector(b, "b")
    y_bar = as_vector(y_bar, "y_bar")
    _check_len(u, y_bar)
    T = u.size
    b_bar = np.zeros(b.size)
    xc = cross_correlate(u, y_bar)[T - 1:]
    n = min(b.size, T)
    b_bar[:n] = xc[:n]
    u_bar = cross_correlate(b, y_bar)[b.size - 1:][:T]
    return b_bar, u_bar


def _check_len(x, y):
    if x.shape[0] != y.shape[0]:
        raise ShapeError(f"sequence lengths differ: {x.shape[0]} vs {y.shape[0]}")


# MIMO -----------------------------------------------------------------------

def _flat(op: MimoOperator):
    m, p = op.m, op.p
    return op.b.reshape(m * p, -1), op.a.reshape(m * p, -1)


def mimo_entry_outputs(U, op: MimoOperator, counter: MulCounter | None = None) -> np.ndarray:
    """Per-entry outputs ``G_kh u_h`` as a ``(T, m, p)`` array."""
    U = np.asarray(U, dtype=np.float64)
    if U.ndim != 2 or U.shape[1] != op.p:
        raise ShapeError(f"input has shape {U.shape}, operator expects {op.p} channels")
    T = U.shape[0]
    b, a = _flat(op)
    u_bank = np.tile(U, (1, op.m))  # column k*p + h holds u_h
    return filter_bank(b, a, u_bank, counter).reshape(T, op.m, op.p)


def mimo_forward(U, op: MimoOperator, counter: MulCounter | None = None) -> np.ndarray:
    return mimo_entry_outputs(U, op, counter).sum(axis=2)


def mimo_backward(U, op: MimoOperator, Y_bar, entry_outputs=None,
                  need_u=True, need_b=True, need_a=True) -> GradientBundle:
    """Adjoints of every grid entry and of the ``p``-channel input.

    ``entry_outputs`` are the ``(T, m, p)`` per-entry forward outputs; they
    are recomputed when not supplied. Adjoints switched off by the
    ``need_*`` flags come back as ``None``.
    """
    U = np.asarray(U, dtype=np.float64)
    Y_bar = np.asarray(Y_bar, dtype=np.float64)
    m, p = op.m, op.p
    if Y_bar.ndim != 2 or Y_bar.shape != (U.shape[0], m):
        raise ShapeError(f"output adjoint has shape {Y_bar.shape}, expected {(U.shape[0], m)}")
    T = U.shape[0]
    n_b1 = op.b.shape[2]
    n_a = op.a.shape[2]
    b, a = _flat(op)
    ones = np.ones((m * p, 1))
    yb_bank = np.repeat(Y_bar, p, axis=1)  # column k*p + h holds y_bar_k
    b_bar = a_bar = u_bar = None

    if need_b:
        s_b = filter_bank(ones, a, np.tile(U, (1, m)))
        b_bar = _shifted_dots(yb_bank, s_b, n_b1).T.reshape(m, p, n_b1)

    if need_a:
        if n_a:
            if entry_outputs is None:
                entry_outputs = mimo_entry_outputs(U, op)
            s_a = filter_bank(-ones, a, entry_outputs.reshape(T, m * p))
            a_bar = _shifted_dots(yb_bank, s_a, n_a + 1)[1:].T.reshape(m, p, n_a)
        else:
            a_bar = np.zeros((m, p, 0))

    if need_u:
        u_rev = filter_bank(b, a, yb_bank[::-1])[::-1]
        u_bar = u_rev.reshape(T, m, p).sum(axis=1)
    return GradientBundle(b_bar=b_bar, a_bar=a_bar, u_bar=u_bar)


def mimo_fir_forward(U, b) -> np.ndarray:
    """FIR grid ``b: (m, p, n_b+1)`` applied to ``U: (T, p)`` by direct convolution."""
    U = np.asarray(U, dtype=np.float64)
    m, p, _ = b.shape
    if U.ndim != 2 or U.shape[1] != p:
        raise ShapeError(f"input has shape {U.shape}, FIR grid expects {p} channels")
    T = U.shape[0]
    Y = np.zeros((T, m))
    for k in range(m):
        for h in range(p):
            Y[:, k] += np.convolve(b[k, h], U[:, h])[:T]
    return Y


def mimo_fir_backward(U, b, Y_bar):
    U = np.asarray(U, dtype=np.float64)
    m, p, _ = b.shape
    b_bar = np.zeros_like(b)
    u_bar = np.zeros_like(U)
    for k in range(m):
        for h in range(p):
            bb, ub = fir_backward(U[:, h], b[k, h], Y_bar[:, k])
            b_bar[k, h] = bb
            u_bar[:, h] += ub
    return b_bar, u_bar
