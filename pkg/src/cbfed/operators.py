"""Model parameters and the nonlinear operators of the flow equation.

The state equation treated throughout is

    dy/dt + mu A y + alpha y + B(y) + beta C_r(y) + gamma C_q(y) = P f,

with A the Stokes operator, B(y) = P[(y.grad) y] the projected convection,
and C_p(y) = P[|y|^{p-1} y] the projected power damping.  All quadratic and
power-law products are evaluated pointwise on oversampled nodal grids so the
discrete pairings reproduce the continuous integral identities to roundoff
at the tested powers.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import spectral as sp
from .errors import ConfigError, RegimeError


@dataclass(frozen=True)
class PhysicalParams:
    """Viscosity, Darcy drag, damping strengths and exponents."""

    mu: float
    alpha: float
    beta: float
    gamma: float
    r: float
    q: float

    def __post_init__(self):
        if not (self.mu > 0):
            raise ConfigError("viscosity mu must be positive")
        if not (self.alpha > 0):
            raise ConfigError("drag coefficient alpha must be positive")
        if not (self.beta > 0):
            raise ConfigError("damping coefficient beta must be positive")
        if not (self.q >= 1):
            raise ConfigError("lower exponent q must be >= 1")
        if not (self.r > self.q):
            raise ConfigError("exponents must satisfy r > q")

    @property
    def regime(self) -> str:
        if self.r > 3:
            return "supercritical"
        if self.r == 3 and 2 * self.beta * self.mu > 1:
            return "critical"
        return "unsupported"


# ---------------------------------------------------------------------------
# pointwise helpers


def _pow0(base: np.ndarray, expo: float) -> np.ndarray:
    """base**expo with the convention 0**e = 0 (any e), elementwise."""
    if expo == 0.0:
        return np.where(base > 0, 1.0, 0.0)
    out = np.zeros_like(base)
    nz = base > 0
    out[nz] = base[nz] ** expo
    return out


def _fine_grid(grid: sp.TorusGrid, factor: int) -> sp.TorusGrid:
    if factor == 1:
        return grid
    return sp.TorusGrid(grid.d, factor * grid.N, grid.L)


def _to_fine(field: sp.SpectralField, factor: int) -> sp.SpectralField:
    if factor == 1:
        return field
    gf = _fine_grid(field.grid, factor)
    return sp.SpectralField(gf, sp.pad_coeffs(field.c, field.grid, gf.N))


def _from_fine(values: np.ndarray, grid: sp.TorusGrid, factor: int) -> sp.SpectralField:
    c = sp.fine_to_coeffs(values, grid, factor)
    return sp.SpectralField(grid, c)


# ---------------------------------------------------------------------------
# convection


def convective(y: sp.SpectralField) -> sp.SpectralField:
    """B(y) = P[(y.grad) y], with 2/3-rule dealiasing of the product."""
    g = y.grid
    c = y.c * g.dealias
    yd = sp.SpectralField(g, c)
    vals = yd.physical()
    grads = sp.gradient_physical(yd)                  # grads[a, b] = d_a y_b
    adv = np.einsum("aX,abX->bX", vals.reshape(g.d, -1), grads.reshape(g.d, g.d, -1))
    adv = adv.reshape((g.d,) + g.shape)
    ch = np.fft.fftn(adv, axes=g.axes()) / g.N**g.d
    ch *= g.dealias
    return sp.leray(sp.SpectralField(g, ch))


def shifted_convective(z: sp.SpectralField, around) -> sp.SpectralField:
    """B(around + z) - B(around); plain B(z) when around is None."""
    if around is None:
        return convective(z)
    return convective(z + around) - convective(around)


def trilinear(y: sp.SpectralField, z: sp.SpectralField, w: sp.SpectralField) -> float:
    """b(y, z, w) = int (y.grad) z . w dx by oversampled nodal quadrature."""
    g = y.grid
    factor = 2
    gf = _fine_grid(g, factor)
    yv = sp.oversample(y, factor)
    wv = sp.oversample(w, factor)
    zf = _to_fine(z, factor)
    gz = sp.gradient_physical(zf)                     # gz[a, b] = d_a z_b
    M = gf.N
    prod = np.einsum(
        "aX,abX,bX->X", yv.reshape(g.d, -1), gz.reshape(g.d, g.d, -1), wv.reshape(g.d, -1)
    )
    return float(prod.sum() * (g.L / M) ** g.d)


# ---------------------------------------------------------------------------
# power damping and its derivatives


def power_damping(y: sp.SpectralField, p: float) -> sp.SpectralField:
    """C_p(y) = P[|y|^{p-1} y], evaluated on an oversampled grid."""
    if p == 1:
        return sp.leray(y)
    g = y.grid
    factor = sp.oversample_factor(p)
    vals = sp.oversample(y, factor)
    m2 = np.sum(vals**2, axis=0)
    out = _pow0(m2, (p - 1) / 2.0)[None] * vals
    return sp.leray(_from_fine(out, g, factor))


def gateaux_first(y: sp.SpectralField, z: sp.SpectralField, p: float) -> sp.SpectralField:
    """Directional derivative C_p'(y) z.

    For p = 1 this is P z; otherwise
    P[|y|^{p-1} z + (p-1)|y|^{p-3} (y.z) y], with the |y| = 0 branch set to 0.
    """
    if p == 1:
        return sp.leray(z)
    g = y.grid
    factor = sp.oversample_factor(p)
    Y = sp.oversample(y, factor)
    Z = sp.oversample(z, factor)
    m2 = np.sum(Y**2, axis=0)
    dot = np.sum(Y * Z, axis=0)
    out = _pow0(m2, (p - 1) / 2.0)[None] * Z + (p - 1) * (_pow0(m2, (p - 3) / 2.0) * dot)[None] * Y
    return sp.leray(_from_fine(out, g, factor))


def gateaux_second(
    y: sp.SpectralField, z: sp.SpectralField, w: sp.SpectralField, p: float
) -> sp.SpectralField:
    """Symmetric bilinear second derivative C_p''(y)(z, w).

    P[(p-1)|y|^{p-3}((y.z) w + (y.w) z + (z.w) y)
      + (p-1)(p-3)|y|^{p-5}(y.z)(y.w) y],
    the second bracket dropped at p = 3 and the |y| = 0 branch set to 0.
    """
    if p == 1:
        return sp.SpectralField.zero(y.grid)
    g = y.grid
    factor = sp.oversample_factor(p)
    Y = sp.oversample(y, factor)
    Z = sp.oversample(z, factor)
    W = sp.oversample(w, factor)
    m2 = np.sum(Y**2, axis=0)
    yz = np.sum(Y * Z, axis=0)
    yw = np.sum(Y * W, axis=0)
    zw = np.sum(Z * W, axis=0)
    out = (p - 1) * _pow0(m2, (p - 3) / 2.0)[None] * (yz[None] * W + yw[None] * Z + zw[None] * Y)
    if p != 3:
        out += (p - 1) * (p - 3) * (_pow0(m2, (p - 5) / 2.0) * yz * yw)[None] * Y
    return sp.leray(_from_fine(out, g, factor))


def shifted_damping(z: sp.SpectralField, around, p: float) -> sp.SpectralField:
    """C_p(around + z) - C_p(around); plain C_p(z) when around is None."""
    if around is None:
        return power_damping(z, p)
    return power_damping(z + around, p) - power_damping(around, p)


def monotonicity_triple(y: sp.SpectralField, z: sp.SpectralField, r: float):
    """(lhs, mid, low) of the strong-monotonicity chain for C_r.

    lhs = (C_r(y) - C_r(z), y - z)
    mid = 1/2 || |y|^{(r-1)/2}(y-z) ||^2 + 1/2 || |z|^{(r-1)/2}(y-z) ||^2
    low = 2^{1-r} ||y - z||_{L^{r+1}}^{r+1}
    """
    g = y.grid
    diff = y - z
    lhs = sp.inner(power_damping(y, r) - power_damping(z, r), diff)
    factor = 4
    Y = sp.oversample(y, factor)
    Z = sp.oversample(z, factor)
    D = sp.oversample(diff, factor)
    d2 = np.sum(D**2, axis=0)
    vol = (g.L / (factor * g.N)) ** g.d
    my = _pow0(np.sum(Y**2, axis=0), (r - 1) / 2.0)
    mz = _pow0(np.sum(Z**2, axis=0), (r - 1) / 2.0)
    mid = 0.5 * vol * float(np.sum(my * d2) + np.sum(mz * d2))
    low = 2.0 ** (1 - r) * sp.norm_Lp(diff, r + 1) ** (r + 1)
    return lhs, mid, low


def identity_residual(y: sp.SpectralField, r: float) -> float:
    """Relative defect of the torus integration-by-parts identity

    int (-Lap y).|y|^{r-1} y = int |grad y|^2 |y|^{r-1}
                               + 4 (r-1)/(r+1)^2 int |grad |y|^{(r+1)/2}|^2.
    """
    g = y.grid
    factor = 4
    gf = _fine_grid(g, factor)
    yf = _to_fine(y, factor)
    Y = yf.physical()
    G = sp.gradient_physical(yf)
    lapY = sp.SpectralField(gf, yf.c * gf.lap).physical()
    m2 = np.sum(Y**2, axis=0)
    mr1 = _pow0(m2, (r - 1) / 2.0)
    vol = (g.L / gf.N) ** g.d
    lhs = vol * float(np.sum(lapY * Y * mr1[None]))
    rhs1 = vol * float(np.sum(np.sum(G**2, axis=(0, 1)) * mr1))
    wpow = _pow0(m2, (r + 1) / 4.0)
    cw = np.fft.fftn(wpow) / gf.N**g.d
    ik = (2j * np.pi / g.L) * gf.wave
    gw = np.real(np.fft.ifftn(ik * cw[None], axes=gf.axes()) * gf.N**g.d)
    rhs2 = 4 * (r - 1) / (r + 1) ** 2 * vol * float(np.sum(gw**2))
    return abs(lhs - (rhs1 + rhs2)) / max(1.0, abs(lhs))


# ---------------------------------------------------------------------------
# closed-form absorption constants
#
# Convention for the degenerate exponents: a pumping constant is 0 outright
# when gamma = 0; otherwise a bracket raised to the power 0 counts as 1.


def _bracket_pow(base: float, expo: float) -> float:
    return 1.0 if expo == 0.0 else base**expo


def convection_rate(mu: float, beta: float, r: float, eps: float) -> float:
    """Rate absorbed by the eps-weighted damping when splitting convection."""
    if not (r > 3):
        raise RegimeError("convection absorption constant requires r > 3")
    if not (eps > 0):
        raise ConfigError("eps must be positive")
    return (r - 3) / (2 * mu * (r - 1)) * (4.0 / (eps * beta * mu * (r - 1))) ** (2.0 / (r - 3))


def pumping_rate(beta: float, gamma: float, r: float, q: float, eps: float) -> float:
    """Rate absorbed when splitting the gamma-pumping term against damping."""
    if not (eps > 0):
        raise ConfigError("eps must be positive")
    if gamma == 0:
        return 0.0
    base = 2.0**q * q * abs(gamma) * (q - 1) / (eps * beta * (r - 1))
    return (r - q) / (r - 1) * _bracket_pow(base, (q - 1) / (r - q))


def eta_pair(params: PhysicalParams):
    """Unit-eps convection rate and the companion pumping rate."""
    eta1 = convection_rate(params.mu, params.beta, params.r, 1.0)
    if params.gamma == 0:
        return eta1, 0.0
    r, q = params.r, params.q
    lead = (q * abs(params.gamma)) ** ((r - 1) / (r - q))
    brk = _bracket_pow(4.0 / params.beta * (q - 1) / (r - 1), (q - 1) / (r - q))
    return eta1, lead * brk * (r - q) / (r - 1)


def critical_pumping_rates(params: PhysicalParams):
    """Absorption pair for r = 3 under 2 beta mu > 1."""
    if params.r != 3:
        raise RegimeError("critical absorption constants require r = 3")
    if not (2 * params.beta * params.mu > 1):
        raise RegimeError("critical regime needs 2 beta mu > 1")
    if params.gamma == 0:
        return 0.0, 0.0
    q = params.q
    gq = 2.0 ** (q - 1) * q * abs(params.gamma) * (q - 1)
    expo = (q - 1) / (3 - q)
    r1 = _bracket_pow(gq * params.mu, expo) * (3 - q) / 2.0
    r2 = _bracket_pow(gq / (params.beta - 1.0 / (2 * params.mu)), expo) * (3 - q) / 2.0
    return r1, r2


@dataclass(frozen=True)
class StabilityConstants:
    """Absorption rates entering the feedback thresholds and energy budget."""

    conv_rate: float       # convection absorbed at the chosen eps
    pump_rate_a: float     # pumping absorbed at eps_tilde
    pump_rate_b: float     # pumping absorbed at eps
    threshold_rate: float  # sum of the three above
    eta_conv: float        # convection rate at unit eps
    eta_pump: float        # companion pumping rate
    shift_rate: float      # max(threshold_rate, eta_conv + eta_pump)
    growth_rate: float     # forcing-side growth constant (includes M)
    energy_rate: float     # growth_rate + 1, the energy-inequality rate


def stability_constants(
    params: PhysicalParams, eps: float = 0.5, eps_tilde: float = 1.0, M: float = 0.0
) -> StabilityConstants:
    """Bundle of closed-form constants for the admissible (eps, eps_tilde) window."""
    if not (0 < eps <= 0.5):
        raise ConfigError("eps must lie in (0, 1/2]")
    if not (0 < eps_tilde <= 1.0):
        raise ConfigError("eps_tilde must lie in (0, 1]")
    regime = params.regime
    if regime == "supercritical":
        conv = convection_rate(params.mu, params.beta, params.r, eps)
        pa = pumping_rate(params.beta, params.gamma, params.r, params.q, eps_tilde)
        pb = pumping_rate(params.beta, params.gamma, params.r, params.q, eps)
        eta1, eta2 = eta_pair(params)
        total = conv + pa + pb
        growth = (
            M
            + convection_rate(params.mu, params.beta, params.r, 0.5)
            + pumping_rate(params.beta, params.gamma, params.r, params.q, 1.0)
            + pumping_rate(params.beta, params.gamma, params.r, params.q, 0.5)
        )
        return StabilityConstants(
            conv, pa, pb, total, eta1, eta2, max(total, eta1 + eta2), growth, growth + 1.0
        )
    if regime == "critical":
        r1, r2 = critical_pumping_rates(params)
        total = r1 + r2
        growth = M + total
        return StabilityConstants(0.0, r1, r2, total, 0.0, 0.0, total, growth, growth + 1.0)
    raise RegimeError(
        "no closed-form constants outside r > 3 or (r = 3 with 2 beta mu > 1)"
    )
