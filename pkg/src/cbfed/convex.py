"""Closed convex constraint sets and their Moreau-Yosida machinery.

A constraint object needs three methods: project(x), contains(x, tol),
distance(x).  The two families used by the feedback laws are H-balls and
spans of low eigenmodes; both contain 0 and are invariant under the Stokes
resolvent, which is what the invariance checker certifies numerically.
"""
from __future__ import annotations

import numpy as np

from . import spectral as sp


class BallConstraint:
    """{x : ||x||_H <= R}."""

    def __init__(self, radius: float):
        if not (radius > 0):
            raise ValueError("ball radius must be positive")
        self.radius = float(radius)

    def project(self, x: sp.SpectralField) -> sp.SpectralField:
        n = sp.norm_H(x)
        if n <= self.radius:
            return x.copy()
        return (self.radius / n) * x

    def contains(self, x: sp.SpectralField, tol: float = 1e-12) -> bool:
        return sp.norm_H(x) <= self.radius * (1 + tol)

    def distance(self, x: sp.SpectralField) -> float:
        return max(0.0, sp.norm_H(x) - self.radius)

    def __repr__(self):
        return f"BallConstraint(R={self.radius:g})"


class SpanConstraint:
    """Span of a list of orthonormal eigenmodes (or fields)."""

    def __init__(self, modes):
        self.fields = [m.field if isinstance(m, sp.EigenMode) else m for m in modes]
        if not self.fields:
            raise ValueError("span constraint needs at least one mode")

    def project(self, x: sp.SpectralField) -> sp.SpectralField:
        out = sp.SpectralField.zero(x.grid)
        for w in self.fields:
            out = out + sp.inner(x, w) * w
        return out

    def contains(self, x: sp.SpectralField, tol: float = 1e-10) -> bool:
        return self.distance(x) <= tol * max(1.0, sp.norm_H(x))

    def distance(self, x: sp.SpectralField) -> float:
        return sp.norm_H(x - self.project(x))

    def __repr__(self):
        return f"SpanConstraint(n={len(self.fields)})"


def yosida_term(K, x: sp.SpectralField, lam: float) -> sp.SpectralField:
    """Yosida approximation of the normal-cone term: (x - P_K x)/lam."""
    if not (lam > 0):
        raise ValueError("Yosida parameter must be positive")
    return (1.0 / lam) * (x - K.project(x))


def resolvent_invariance_margin(
    K, grid: sp.TorusGrid, lams, samples: int = 20, seed: int = 0, witnesses=()
) -> float:
    """Worst escape distance of (I + lam A)^{-1} K from K.

    Samples random members of K (projections of random fields, pushed toward
    the set where they sit), applies the resolvent for each lam, and returns
    the largest distance back to K.  Nonpositive-to-tiny means invariant;
    the caller can pass explicit witnesses to stress a suspect set.
    """
    worst = 0.0
    points = [K.project(sp.random_solenoidal(grid, seed=seed + t, decay=1.0)) for t in range(samples)]
    points += [K.project(2.0 * sp.random_solenoidal(grid, seed=seed + 1000 + t, decay=0.5)) for t in range(samples)]
    points += list(witnesses)
    for x in points:
        for lam in lams:
            y = sp.resolvent(x, lam)
            worst = max(worst, K.distance(y))
    return worst
