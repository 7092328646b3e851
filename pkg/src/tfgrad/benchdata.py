"""Synthetic identification datasets and their CSV persistence.

Generators are pure functions of their configuration and seed. The
Bouc-Wen and friction-integrator plants are integrated with fixed-step
classical RK4, holding the input constant between samples.
"""
from __future__ import annotations

import csv
import io
import math
import os
import tempfile
from dataclasses import dataclass, fields

import numba
import numpy as np

from .errors import DatasetFormatError, NumericalRangeError
from .signal_core import TransferFunction, as_series, iir_filter


@dataclass
class MultisineConfig:
    T: int
    f_s: float = 1.0
    band: tuple = (0.0, 0.5)
    rms: float = 1.0
    seed: int = 0

    def __post_init__(self):
        f_lo, f_hi = self.band
        if self.T < 2:
            raise ValueError("multisine needs T >= 2")
        if not 0.0 <= f_lo < f_hi <= self.f_s / 2:
            raise ValueError(f"invalid band {self.band} for f_s={self.f_s}")


def multisine_bins(cfg: MultisineConfig) -> np.ndarray:
    """DFT bin indices excited by ``cfg``; DC and Nyquist are never excited."""
    k = np.arange(1, (cfg.T + 1) // 2)
    f = k * cfg.f_s / cfg.T
    return k[(f >= cfg.band[0]) & (f <= cfg.band[1])]


def generate_multisine(cfg: MultisineConfig) -> np.ndarray:
    """Random-phase multisine with a flat amplitude spectrum in band, as a ``(T, 1)`` series."""
    rng = np.random.default_rng(cfg.seed)
    bins = multisine_bins(cfg)
    spec = np.zeros(cfg.T // 2 + 1, dtype=complex)
    spec[bins] = np.exp(1j * rng.uniform(0.0, 2.0 * np.pi, bins.size))
    u = np.fft.irfft(spec, n=cfg.T)
    power = np.sqrt(np.mean(u**2))
    if power > 0:
        u *= cfg.rms / power
    return u[:, None]


def simulate_wh_reference(g1: TransferFunction, f, g2: TransferFunction, u) -> np.ndarray:
    """``G2 f(G1 u)`` with ``f`` applied per sample; ``u`` is 1-D or a single channel."""
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    return iir_filter(g2, f(iir_filter(g1, u)))[:, None]


# Bouc-Wen ------------------------------------------------------------------

def _coerce_fields(obj):
    # YAML reads "4.0e4" as a string and "2" as an int; numba wants uniform floats
    for f in fields(obj):
        cast = int if f.type in (int, "int") else float
        val = getattr(obj, f.name)
        try:
            num = cast(val)
        except (TypeError, ValueError):
            raise ValueError(f"{f.name}: expected a number, got {val!r}") from None
        if cast is int and isinstance(val, float) and num != val:
            raise ValueError(f"{f.name}: expected an integer, got {val!r}")
        object.__setattr__(obj, f.name, num)


@dataclass
class BoucWenParams:
    """Mass-spring-damper with Bouc-Wen hysteretic force.

    Defaults are chosen here to give visible hysteresis and a bounded
    response to a multisine force of a few tens of newtons; they are not
    taken from any published benchmark. Displacement is returned in mm.
    """

    m_L: float = 2.0
    k_L: float = 4.0e4
    c_L: float = 12.0
    alpha: float = 4.0e4
    beta_bw: float = 1.5e3
    gamma: float = 0.8
    delta: float = -1.1
    nu: float = 1.0
    f_s: float = 750.0
    # RK4 steps per sample; the |v|, |z| kinks cut the method's order,
    # so one step per sample is far from converged
    substeps: int = 200

    def __post_init__(self):
        _coerce_fields(self)
        if self.m_L <= 0 or self.f_s <= 0:
            raise ValueError("m_L and f_s must be positive")
        if self.nu < 1:
            raise ValueError("nu must be >= 1")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")


@numba.njit(cache=True)
def _bw_rhs(y, v, z, u, m, k, c, alpha, beta, gamma, delta, nu):
    az = abs(z)
    dz = alpha * v - beta * (gamma * abs(v) * az ** (nu - 1.0) * z + delta * v * az**nu)
    return v, (u - k * y - c * v - z) / m, dz


@numba.njit(cache=True)
def _bw_rk4(u, dt, sub, m, k, c, alpha, beta, gamma, delta, nu):
    T = u.shape[0]
    out = np.empty((T, 3))
    y = 0.0
    v = 0.0
    z = 0.0
    h = dt / sub
    for t in range(T):
        out[t, 0] = y
        out[t, 1] = v
        out[t, 2] = z
        ut = u[t]
        for _ in range(sub):
            k1y, k1v, k1z = _bw_rhs(y, v, z, ut, m, k, c, alpha, beta, gamma, delta, nu)
            k2y, k2v, k2z = _bw_rhs(y + 0.5 * h * k1y, v + 0.5 * h * k1v, z + 0.5 * h * k1z, ut,
                                    m, k, c, alpha, beta, gamma, delta, nu)
            k3y, k3v, k3z = _bw_rhs(y + 0.5 * h * k2y, v + 0.5 * h * k2v, z + 0.5 * h * k2z, ut,
                                    m, k, c, alpha, beta, gamma, delta, nu)
            k4y, k4v, k4z = _bw_rhs(y + h * k3y, v + h * k3v, z + h * k3z, ut,
                                    m, k, c, alpha, beta, gamma, delta, nu)
            y += h / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
            v += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
            z += h / 6.0 * (k1z + 2.0 * k2z + 2.0 * k3z + k4z)
        if not (math.isfinite(y) and math.isfinite(v) and math.isfinite(z)):
            out[t, 0] = np.nan
            return out, t
    return out, -1


def simulate_boucwen(p: BoucWenParams, u, substeps=None, return_states=False):
    """Displacement (mm) sampled at ``f_s`` from rest; optionally the full ``(y, v, z)`` states.

    The sample at ``t`` is the state before the input ``u[t]`` is applied,
    so the output is strictly causal. States are in SI units.
    """
    u = np.ascontiguousarray(np.asarray(u, dtype=np.float64).reshape(-1))
    sub = p.substeps if substeps is None else int(substeps)
    states, bad = _bw_rk4(u, 1.0 / p.f_s, sub, p.m_L, p.k_L, p.c_L, p.alpha,
                          p.beta_bw, p.gamma, p.delta, p.nu)
    if bad >= 0:
        raise NumericalRangeError(f"Bouc-Wen state became non-finite at sample {bad}", index=bad)
    y = 1e3 * states[:, :1]
    return (y, states) if return_states else y


def step_halving_change(p: BoucWenParams, u) -> float:
    """Relative change of the output when the RK4 step is halved."""
    y1 = simulate_boucwen(p, u)
    y2 = simulate_boucwen(p, u, substeps=2 * p.substeps)
    return float(np.linalg.norm(y2 - y1) / np.linalg.norm(y1))


# friction + integrator plant -------------------------------------------------

@dataclass
class FrictionIntegratorParams:
    """Mass driven by a force against viscous and smoothed Coulomb friction.

    Position is the output, so the plant contains a pure integrator. With
    ``kp > 0`` the excitation is a position reference tracked by a PD loop
    ``f = kp (r - x) - kd v`` evaluated once per sample, and the applied force
    is what gets recorded as the plant input.
    """

    mass: float = 1.0
    viscous: float = 2.0
    coulomb: float = 0.5
    v_smooth: float = 0.05
    kp: float = 0.0
    kd: float = 0.0
    f_s: float = 100.0
    substeps: int = 10

    def __post_init__(self):
        _coerce_fields(self)
        if self.mass <= 0 or self.f_s <= 0 or self.v_smooth <= 0:
            raise ValueError("mass, f_s and v_smooth must be positive")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")


@numba.njit(cache=True)
def _fi_rk4(u, dt, sub, mass, fv, fc, vs, kp, kd):
    T = u.shape[0]
    out = np.empty(T)
    force = np.empty(T)
    x = 0.0
    v = 0.0
    h = dt / sub
    for t in range(T):
        out[t] = x
        ut = kp * (u[t] - x) - kd * v if kp > 0.0 else u[t]
        force[t] = ut
        for _ in range(sub):
            a1 = (ut - fv * v - fc * math.tanh(v / vs)) / mass
            v2 = v + 0.5 * h * a1
            a2 = (ut - fv * v2 - fc * math.tanh(v2 / vs)) / mass
            v3 = v + 0.5 * h * a2
            a3 = (ut - fv * v3 - fc * math.tanh(v3 / vs)) / mass
            v4 = v + h * a3
            a4 = (ut - fv * v4 - fc * math.tanh(v4 / vs)) / mass
            x += h / 6.0 * (v + 2.0 * v2 + 2.0 * v3 + v4)
            v += h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
    return out, force


def simulate_friction_integrator(p: FrictionIntegratorParams, u, return_force=False):
    """Position response ``(T, 1)``; ``return_force`` also gives the applied force."""
    u = np.ascontiguousarray(np.asarray(u, dtype=np.float64).reshape(-1))
    y, force = _fi_rk4(u, 1.0 / p.f_s, p.substeps, p.mass, p.viscous, p.coulomb, p.v_smooth, p.kp, p.kd)
    if not np.all(np.isfinite(y)):
        bad = int(np.argmax(~np.isfinite(y)))
        raise NumericalRangeError(f"plant state became non-finite at sample {bad}", index=bad)
    if return_force:
        return y[:, None], force[:, None]
    return y[:, None]


# noise ---------------------------------------------------------------------

def add_noise(y, snr_db=None, sigma=None, seed=0) -> np.ndarray:
    """White Gaussian output noise, given either as an SNR in dB or a standard deviation."""
    y = np.asarray(y, dtype=np.float64)
    if (snr_db is None) == (sigma is None):
        raise ValueError("give exactly one of snr_db or sigma")
    if sigma is None:
        power = np.mean(y**2, axis=0)
        sigma = np.sqrt(power / 10.0 ** (snr_db / 10.0))
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.all(sigma == 0):
        return y.copy()
    rng = np.random.default_rng(seed)
    return y + sigma * rng.standard_normal(y.shape)


def snr_db(clean, noisy) -> float:
    clean = np.asarray(clean)
    return float(10.0 * np.log10(np.sum(clean**2) / np.sum((noisy - clean) ** 2)))


# datasets ------------------------------------------------------------------

@dataclass
class Dataset:
    """Paired input/output series. Samples ``[0, split)`` are training data."""

    u: np.ndarray
    y: np.ndarray
    f_s: float = 1.0
    split: int | None = None

    def __post_init__(self):
        self.u = as_series(self.u, "u")
        self.y = as_series(self.y, "y")
        if self.u.shape[0] != self.y.shape[0]:
            raise ValueError(f"u and y lengths differ: {self.u.shape[0]} vs {self.y.shape[0]}")
        if self.f_s <= 0:
            raise ValueError("f_s must be positive")
        if self.split is None:
            self.split = self.T
        if not 0 <= self.split <= self.T:
            raise ValueError(f"split {self.split} outside [0, {self.T}]")

    @property
    def T(self) -> int:
        return self.u.shape[0]

    def train_part(self):
        return self.u[: self.split], self.y[: self.split]

    def test_part(self):
        return self.u[self.split:], self.y[self.split:]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (np.array_equal(self.u, other.u) and np.array_equal(self.y, other.y)
                and self.f_s == other.f_s and self.split == other.split)


def save_csv(d: Dataset, path):
    """Write ``# f_s=... split=...`` then a ``u0..,y0..`` header and one row per sample.

    Values use 17 significant digits, so float64 data round-trips exactly.
    The file is written to a temporary name and moved into place.
    """
    buf = io.StringIO()
    buf.write(f"# f_s={d.f_s!r} split={d.split}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"u{i}" for i in range(d.u.shape[1])] + [f"y{i}" for i in range(d.y.shape[1])])
    for row in np.hstack([d.u, d.y]):
        w.writerow([f"{v:.17g}" for v in row])
    atomic_write(path, buf.getvalue())


def atomic_write(path, text):
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_csv(path) -> Dataset:
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("#"):
        raise DatasetFormatError("missing metadata comment line", line=1)
    meta = {}
    for item in lines[0][1:].split():
        key, sep, val = item.partition("=")
        if not sep:
            raise DatasetFormatError(f"malformed metadata entry {item!r}", line=1)
        meta[key] = val
    try:
        f_s = float(meta["f_s"])
        split = int(meta["split"])
    except (KeyError, ValueError) as exc:
        raise DatasetFormatError(f"bad metadata: {exc}", line=1) from None
    if len(lines) < 2:
        raise DatasetFormatError("missing header row", line=2)
    header = next(csv.reader([lines[1]]))
    n_u = sum(1 for h in header if h.startswith("u"))
    n_y = sum(1 for h in header if h.startswith("y"))
    expected = [f"u{i}" for i in range(n_u)] + [f"y{i}" for i in range(n_y)]
    if header != expected or n_u == 0 or n_y == 0:
        raise DatasetFormatError(f"header must be u0..u(p-1),y0..y(m-1), got {header}", line=2)
    rows = []
    for lineno, row in enumerate(csv.reader(lines[2:]), start=3):
        if len(row) != len(header):
            raise DatasetFormatError(f"expected {len(header)} columns, found {len(row)}", line=lineno)
        try:
            rows.append([float(v) for v in row])
        except ValueError as exc:
            raise DatasetFormatError(str(exc), line=lineno) from None
    if not rows:
        raise DatasetFormatError("no data rows", line=3)
    data = np.array(rows)
    try:
        return Dataset(data[:, :n_u], data[:, n_u:], f_s=f_s, split=split)
    except ValueError as exc:
        raise DatasetFormatError(str(exc)) from None
