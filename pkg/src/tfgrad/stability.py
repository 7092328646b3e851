"""Second-order stability region and stable denominator reparametrizations.

For ``A(q) = 1 + a1 q^-1 + a2 q^-2`` both poles lie strictly inside the unit
circle iff ``|a1| < 2`` and ``|a1| - 1 < a2 < 1``.

Two maps from unconstrained variables into that region are provided, both
assembled from ordinary graph nodes so that gradients flow through them:

* ``conj``: ``a1 = -2 sig(rho) cos(pi sig(psi))``, ``a2 = sig(rho)^2``
  (complex-conjugate or coincident poles only);
* ``full``: ``a1 = 2 tanh(alpha1)``,
  ``a2 = |a1| + (2 - |a1|) sig(alpha2) - 1`` (the whole region).

Floating-point saturation of ``sig``/``tanh`` means strict containment only
holds while the unconstrained inputs stay within roughly ``|x| < 30``.
"""
from __future__ import annotations

import numpy as np

from .autodiff import Graph, Node

PARAMETRIZATIONS = ("raw", "conj", "full")


def jury_stable(a1, a2):
    """Elementwise Jury test for ``q^2 + a1 q + a2``."""
    a1 = np.asarray(a1, dtype=np.float64)
    a2 = np.asarray(a2, dtype=np.float64)
    out = (np.abs(a1) < 2.0) & (np.abs(a1) - 1.0 < a2) & (a2 < 1.0)
    return bool(out) if out.ndim == 0 else out


def pole_class(a1, a2):
    """``"complex"``, ``"real"`` or ``"coincident"`` from the discriminant sign."""
    disc = a1 * a1 / 4.0 - a2
    if disc < 0:
        return "complex"
    if disc > 0:
        return "real"
    return "coincident"


def conj_coeffs(g: Graph, rho: Node, psi: Node, name="conj") -> Node:
    """Append the conjugate-pole map; returns a node stacking ``[a1, a2]`` on the last axis."""
    r = g.sigmoid(rho, name=f"{name}.r")
    beta = g.scale(g.sigmoid(psi, name=f"{name}.sig_psi"), np.pi, name=f"{name}.beta")
    a1 = g.scale(g.mul(r, g.cos(beta, name=f"{name}.cos"), name=f"{name}.rcos"), -2.0, name=f"{name}.a1")
    a2 = g.mul(r, r, name=f"{name}.a2")
    return g.concat(a1, a2, name=f"{name}.a")


def full_coeffs(g: Graph, alpha1: Node, alpha2: Node, name="full") -> Node:
    """Append the full-region map; returns a node stacking ``[a1, a2]`` on the last axis."""
    a1 = g.scale(g.tanh(alpha1, name=f"{name}.tanh"), 2.0, name=f"{name}.a1")
    mag = g.abs(a1, name=f"{name}.abs")
    room = g.scale(mag, -1.0, 2.0, name=f"{name}.room")
    frac = g.mul(room, g.sigmoid(alpha2, name=f"{name}.sig"), name=f"{name}.frac")
    a2 = g.scale(g.sum(mag, frac, name=f"{name}.sum"), 1.0, -1.0, name=f"{name}.a2")
    return g.concat(a1, a2, name=f"{name}.a")


def _evaluate(builder, x1, x2):
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    g = Graph()
    p1 = g.param("x1", x1[..., None])
    p2 = g.param("x2", x2[..., None])
    a = g.forward({}, builder(g, p1, p2))
    return a[..., 0], a[..., 1]


def conj_param_to_coeffs(rho, psi):
    """Numeric ``(a1, a2)`` of the conjugate-pole map (arrays broadcast)."""
    return _evaluate(conj_coeffs, rho, psi)


def full_param_to_coeffs(alpha1, alpha2):
    """Numeric ``(a1, a2)`` of the full-region map (arrays broadcast)."""
    return _evaluate(full_coeffs, alpha1, alpha2)
