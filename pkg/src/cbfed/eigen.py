"""Principal eigenvalue of the damped Stokes operator with masked feedback.

The operator sends a divergence-free field y to

    mu * (Stokes y) + alpha * y + k * P(m y),

where m is the indicator of the control region and P the solenoidal
projection.  As the gain k grows, the smallest eigenvalue climbs toward the
principal eigenvalue of the drag-shifted Stokes problem with the field pinned
on the control region; that limit is what certifies a decay rate for the
proportional feedback loop.  The routines here compute the smallest
eigenvalue at finite gain, extrapolate the large-gain limit from a gain
ladder, and evaluate an isoperimetric lower bound that depends only on the
volume of the uncontrolled region.
"""
from __future__ import annotations

import math

import numpy as np

from . import operators as op
from . import spectral as sp
from .errors import ConfigError, SolverDivergence


class DomainMask:
    """Indicator of the control region, a union of axis-aligned boxes.

    Boxes are half-open products of intervals, one ``(lo, hi)`` pair per
    axis.  The complement (where no feedback acts) must be nonempty, and so
    must the control region itself.
    """

    def __init__(self, grid: sp.TorusGrid, boxes):
        if not boxes:
            raise ConfigError("control region needs at least one box")
        nodes = grid.nodes()
        ind = np.zeros(grid.shape, dtype=bool)
        clean = []
        for box in boxes:
            if len(box) != grid.d:
                raise ConfigError("each box needs one (lo, hi) pair per axis")
            hit = np.ones(grid.shape, dtype=bool)
            pairs = []
            for a, (lo, hi) in enumerate(box):
                lo, hi = float(lo), float(hi)
                if not (0.0 <= lo < hi <= grid.L + 1e-12):
                    raise ConfigError("box edges must satisfy 0 <= lo < hi <= L")
                hit &= (nodes[a] >= lo - 1e-12) & (nodes[a] < hi - 1e-12)
                pairs.append((lo, hi))
            ind |= hit
            clean.append(tuple(pairs))
        self.grid = grid
        self.boxes = clean
        self.indicator = ind.astype(float)
        covered = float(self.indicator.sum()) * grid.cell_volume
        self.complement_volume = grid.L**grid.d - covered
        if covered <= 0.0:
            raise ConfigError("control region has zero volume")
        if self.complement_volume <= 0.0:
            raise ConfigError("complement of the control region is empty")


def _as_indicator(mask, grid: sp.TorusGrid) -> np.ndarray:
    if isinstance(mask, DomainMask):
        if mask.grid != grid:
            raise ConfigError("mask was built on a different grid")
        return mask.indicator
    m = np.asarray(mask, dtype=float)
    if m.shape != grid.shape:
        raise ConfigError(f"mask shape {m.shape} does not match the grid {grid.shape}")
    return m


def apply_Ak(y: sp.SpectralField, k_gain: float, mask, mu: float, alpha: float):
    """Damped Stokes operator plus the gain-weighted masked coupling."""
    m = _as_indicator(mask, y.grid)
    out = mu * sp.stokes(y) + alpha * y
    if k_gain != 0.0:
        fed = sp.SpectralField.from_physical(y.grid, m * y.physical())
        out = out + k_gain * sp.leray(fed)
    return out


def _solve_spd(grid, apply_op, precond, rhs, rtol, maxiter):
    """Preconditioned conjugate gradients for a symmetric positive operator."""
    x = sp.SpectralField.zero(grid)
    r = rhs.copy()
    target = rtol * sp.norm_H(rhs)
    z = sp.SpectralField(grid, r.c * precond)
    p = z.copy()
    rz = sp.inner(r, z)
    for _ in range(maxiter):
        if sp.norm_H(r) <= target:
            return x
        ap = apply_op(p)
        pap = sp.inner(p, ap)
        if pap <= 0.0:
            raise SolverDivergence("feedback operator lost positivity in the inner solve")
        step = rz / pap
        x = x + step * p
        r = r - step * ap
        z = sp.SpectralField(grid, r.c * precond)
        rz_new = sp.inner(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    if sp.norm_H(r) <= target:
        return x
    raise SolverDivergence("conjugate gradients stalled on the feedback operator")


def smallest_eigenvalue_Ak(
    grid: sp.TorusGrid,
    k_gain: float,
    mask,
    mu: float,
    alpha: float,
    tol: float = 1e-9,
    seed: int = 7,
    max_power: int = 200,
    max_cg: int = 3000,
):
    """Smallest eigenvalue and eigenfield of the masked feedback operator.

    Inverse power iteration; every linear solve runs conjugate gradients
    preconditioned by the diagonal (mu * Stokes + alpha) inverse.  Returns
    ``(nu, eigenfield, iterations)`` once the eigen-residual drops below
    ``tol * max(1, nu)`` times the field norm.
    """
    m = _as_indicator(mask, grid)

    def apply_op(field):
        return apply_Ak(field, k_gain, m, mu, alpha)

    precond = 1.0 / (mu * grid.lap + alpha)
    rtol = max(1e-13, 0.01 * tol)

    base = np.zeros((grid.d,) + grid.shape)
    base[0] = 1.0
    v = sp.SpectralField.from_physical(grid, base) + 0.2 * sp.random_solenoidal(
        grid, seed=seed, decay=1.5
    )
    v = (1.0 / sp.norm_H(v)) * v
    for it in range(1, max_power + 1):
        w = _solve_spd(grid, apply_op, precond, v, rtol, max_cg)
        # scrub roundoff that leaks out of the real solenoidal sector: the
        # coupling is blind to imaginary and to gradient content, so either
        # kind of leak gets amplified into a fake pure Stokes mode
        w = sp.leray(sp.SpectralField.from_physical(grid, w.physical()))
        v = (1.0 / sp.norm_H(w)) * w
        av = apply_op(v)
        nu = sp.inner(av, v)
        if sp.norm_H(av - nu * v) <= tol * max(1.0, abs(nu)):
            return float(nu), v, it
    raise SolverDivergence("inverse power iteration did not converge")


def lambda_star_estimate(
    grid: sp.TorusGrid,
    mask,
    k_ladder,
    mu: float,
    alpha: float,
    tol: float = 1e-9,
    seed: int = 7,
):
    """Large-gain limit of the smallest eigenvalue along a gain ladder.

    The eigenvalue approaches its limit like ``limit - c / k``, so a ladder
    of geometrically increasing gains admits Richardson extrapolation in
    ``1 / k``; the last two rungs give the reported estimate.  The ladder of
    eigenvalues must be nondecreasing up to solver tolerance.
    """
    if isinstance(mask, DomainMask):
        m = mask.indicator
        comp = mask.complement_volume
    else:
        m = _as_indicator(mask, grid)
        comp = grid.L**grid.d - float(m.sum()) * grid.cell_volume
    if comp <= 0.0:
        raise ConfigError("complement empty: the gain limit needs an uncontrolled region")
    ks = [float(k) for k in k_ladder]
    if len(ks) < 4:
        raise ConfigError("gain ladder needs at least four values")
    if any(b <= a for a, b in zip(ks, ks[1:])):
        raise ConfigError("gain ladder must be strictly increasing")
    nus = []
    iters = []
    for k in ks:
        nu, _, it = smallest_eigenvalue_Ak(grid, k, m, mu=mu, alpha=alpha, tol=tol, seed=seed)
        nus.append(nu)
        iters.append(it)
    arr = np.asarray(nus)
    scale = max(1.0, float(np.max(np.abs(arr))))
    diffs = np.diff(arr)
    if np.any(diffs < -1e4 * tol * scale):
        raise SolverDivergence("eigenvalue ladder decreased; gain solves look unconverged")
    monotone_ok = bool(np.all(diffs >= -100 * tol * scale))
    k1, k2 = ks[-2], ks[-1]
    lam = (k2 * arr[-1] - k1 * arr[-2]) / (k2 - k1)
    lam = max(float(lam), float(arr.max()))
    return {
        "ks": ks,
        "nus": [float(x) for x in arr],
        "iterations": iters,
        "lambda_star": float(lam),
        "nu_max": float(arr.max()),
        "monotone_ok": monotone_ok,
        "complement_volume": float(comp),
    }


def bessel_j(m: float, x: float) -> float:
    """First-kind Bessel function by its power series (fine for moderate x)."""
    if x == 0.0:
        return 1.0 if m == 0.0 else 0.0
    half = 0.5 * x
    term = half**m / math.gamma(m + 1.0)
    total = term
    for j in range(1, 200):
        term *= -(half * half) / (j * (j + m))
        total += term
        if abs(term) <= 1e-18 * max(1.0, abs(total)):
            break
    return total


_ZERO_CACHE: dict = {}


def bessel_first_zero(m: float, tol: float = 1e-13) -> float:
    """Smallest positive root of the order-m Bessel function, by bisection."""
    if m in _ZERO_CACHE:
        return _ZERO_CACHE[m]
    lo = 1e-6
    hi = lo
    step = 0.05
    while bessel_j(m, hi) > 0.0:
        lo = hi
        hi += step
        if hi > 60.0:
            raise SolverDivergence("no sign change found for the Bessel zero scan")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if bessel_j(m, mid) > 0.0:
            lo = mid
        else:
            hi = mid
    z = 0.5 * (lo + hi)
    _ZERO_CACHE[m] = z
    return z


def _ball_volume(d: int) -> float:
    if d == 2:
        return math.pi
    if d == 3:
        return 4.0 * math.pi / 3.0
    raise ConfigError("dimension must be 2 or 3")


def rfk_bound(volume: float, d: int) -> float:
    """Faber-Krahn style lower bound from the uncontrolled volume alone.

    Among regions of a given volume the ball minimizes the principal
    eigenvalue, which ties the large-gain limit to the first Bessel zero of
    order d/2 - 1 scaled by the ball of the same volume.
    """
    if not (volume > 0.0):
        raise ConfigError("uncontrolled volume must be positive")
    omega = _ball_volume(d)
    return (omega / volume) ** (2.0 / d) * bessel_first_zero(d / 2.0 - 1.0)


def rfk_bound_scaled(volume: float, d: int, mu: float, alpha: float) -> float:
    """Dimensionally consistent companion: mu times the squared zero, plus drag."""
    if not (volume > 0.0):
        raise ConfigError("uncontrolled volume must be positive")
    omega = _ball_volume(d)
    z = bessel_first_zero(d / 2.0 - 1.0)
    return mu * z * z * (omega / volume) ** (2.0 / d) + alpha


def proportional_decay_constant(nu: float, params: op.PhysicalParams, eps: float = 0.0):
    """Certified decay rate for the proportional loop at eigenvalue level nu.

    Subtracts the slack eps and the absorption rates spent on convection and
    on the sign-indefinite pumping term; only the supercritical damping range
    can pay for convection this way.
    """
    if eps < 0.0:
        raise ConfigError("eps must be nonnegative")
    rho_star = op.convection_rate(params.mu, params.beta, params.r, 1.0)
    rho1 = op.pumping_rate(params.beta, params.gamma, params.r, params.q, 2.0)
    rho2 = op.pumping_rate(params.beta, params.gamma, params.r, params.q, 1.0)
    delta = float(nu) - float(eps) - rho_star - rho1 - rho2
    return {
        "nu": float(nu),
        "eps": float(eps),
        "rho_star": rho_star,
        "rho1_star": rho1,
        "rho2_star": rho2,
        "delta": delta,
        "positive": bool(delta > 0.0),
    }
