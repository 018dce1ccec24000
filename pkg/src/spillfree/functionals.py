"""Energy functionals, the control Lyapunov functional and its constants.

Quadrature conventions (shared with the solver):

* cell quantities (``h - h*``, ``h v_x``) use the midpoint rule over cells;
* face quantities (``v``, ``h_x``, ``h v + mu h_x``) use the trapezoidal rule
  over faces, with ``h`` at faces taken as the mean of the adjacent cells and
  at the walls by linear extrapolation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from enum import Enum

import numpy as np

from . import discrete
from .model import DomainError, FullState, Grid, PhysicalParams


class GainConditionViolated(ValueError):
    pass


class DesignInfeasible(ValueError):
    """The decay constant omega came out non-positive for these gains."""


@dataclass(frozen=True)
class Gains:
    sigma: float
    q: float
    k: float
    r: float = 0.0

    def __post_init__(self):
        for name in ("sigma", "q", "k"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.r < 0:
            raise ValueError("r must be non-negative")


# --- the level barrier function -------------------------------------------


def G(h, params: PhysicalParams):
    """Barrier transform of the level; increasing, zero at h*.

    Evaluated in the factored form (2/3)(sqrt h - sqrt h*)^2 (sqrt h + 2 sqrt h*)
    with the difference of roots taken as (h - h*)/(sqrt h + sqrt h*), which
    keeps full relative accuracy near h*.
    """
    hs = params.h_star
    a = math.sqrt(hs)
    if isinstance(h, (float, int)):
        if h <= 0:
            raise DomainError("G is defined for h > 0 only")
        sq = math.sqrt(h)
        d = (h - hs) / (sq + a)
        return math.copysign(2.0 / 3.0 * d * d * (sq + 2.0 * a), d) if d != 0 else 0.0
    h_arr = np.asarray(h, dtype=float)
    if np.any(h_arr <= 0):
        raise DomainError("G is defined for h > 0 only")
    sq = np.sqrt(h_arr)
    d = (h_arr - hs) / (sq + a)
    val = np.sign(d) * (2.0 / 3.0 * d * d * (sq + 2.0 * a))
    return float(val) if val.ndim == 0 else val


def G_lower_limit(params: PhysicalParams) -> float:
    return -4.0 / 3.0 * params.h_star * math.sqrt(params.h_star)


def G_inv(y: float, params: PhysicalParams, max_iter: int = 200) -> float:
    """Inverse of :func:`G` by bracketed bisection.

    Newton is avoided on purpose: G'(h*) = 0 at the root we need most often.
    """
    y = float(y)
    lo_lim = G_lower_limit(params)
    if not y > lo_lim:
        raise DomainError(f"G_inv needs y > {lo_lim}, got {y}")
    hs = params.h_star
    if y == 0.0:
        return hs
    if y > 0:
        lo, hi = hs, 2.0 * hs
        while G(hi, params) < y:
            lo, hi = hi, 2.0 * hi
    else:
        lo, hi = 1e-12 * hs, hs
        # below G(1e-12 h*) the answer is smaller still
        while G(lo, params) > y:
            lo *= 1e-3
            if lo == 0.0:
                raise DomainError(f"G_inv({y}) underflows")
    mid = 0.5 * (lo + hi)
    # run to the resolution of the float grid; 200 halvings cover any bracket
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        gm = G(mid, params)
        if gm == y:
            break
        if gm < y:
            lo = mid
        else:
            hi = mid
    return mid


def level_bounds(V_value: float, params: PhysicalParams) -> tuple[float, float]:
    """Band ``[G_inv(-cV), G_inv(cV)]`` that confines every level while the CLF equals V."""
    if V_value < 0:
        raise DomainError("V must be non-negative")
    cap = 4.0 / 3.0 * params.mu * params.h_star * math.sqrt(params.g * params.h_star)
    if not V_value < cap:
        raise DomainError(f"level bounds need V < {cap}, got {V_value}")
    c = clf_scale(params)
    return G_inv(-c * V_value, params), G_inv(c * V_value, params)


def clf_scale(params: PhysicalParams) -> float:
    """The constant c = 1/(mu sqrt(g))."""
    return 1.0 / (params.mu * math.sqrt(params.g))


def compute_R(params: PhysicalParams) -> float:
    hs, Hm = params.h_star, params.H_max
    return (2.0 * params.mu * math.sqrt(params.g) / 3.0) * (
        2.0 * hs * math.sqrt(hs) + math.sqrt(Hm) * min(Hm - 3.0 * hs, 0.0)
    )


# --- integrals of a state ---------------------------------------------------


@dataclass
class StateIntegrals:
    """The discrete integrals every functional is assembled from."""

    kinetic: float  # int h v^2
    potential: float  # int (h - h*)^2
    w_kinetic: float  # int phi^2 / h
    hx2: float  # int h_x^2
    v2: float  # int v^2
    hvx2: float  # int h v_x^2
    momentum: float  # int h v
    phi_integral: float  # int (h v + mu h_x)
    wall_jump: float  # h(L) - h(0)


def phi_field(state: FullState, params: PhysicalParams, grid: Grid) -> np.ndarray:
    """Face values of h v + mu h_x."""
    hf = discrete.face_levels(state.h)
    return hf * state.v + params.mu * discrete.face_slopes(state.h, grid.dx)


def integrals(state: FullState, params: PhysicalParams, grid: Grid) -> StateIntegrals:
    h = state.h
    *vals, lowest = discrete.integral_terms(h, state.v, grid.dx, params.mu, params.h_star)
    if lowest <= 0:
        raise DomainError("levels must be positive")
    h0, hL = discrete.wall_levels(h)
    return StateIntegrals(*vals, wall_jump=hL - h0)


def energy_E(state: FullState, params: PhysicalParams, grid: Grid) -> float:
    I = integrals(state, params, grid)
    return 0.5 * I.kinetic + 0.5 * params.g * I.potential


def energy_W(state: FullState, params: PhysicalParams, grid: Grid) -> float:
    I = integrals(state, params, grid)
    return 0.5 * I.w_kinetic + 0.5 * params.g * I.potential


def tank_terms(xi: float, w: float, gains: Gains) -> float:
    q, k = gains.q, gains.k
    return 0.5 * q * k * k * xi * xi + 0.5 * q * (w + k * xi) ** 2


def clf_V(state: FullState, params: PhysicalParams, gains: Gains, grid: Grid) -> float:
    I = integrals(state, params, grid)
    return clf_from_integrals(I, state.xi, state.w, params, gains)


def clf_from_integrals(I: StateIntegrals, xi, w, params, gains) -> float:
    return (
        0.5 * I.w_kinetic
        + 0.5 * I.kinetic
        + params.g * I.potential
        + tank_terms(xi, w, gains)
    )


def norm_sq_from_integrals(I: StateIntegrals, xi, w) -> float:
    return xi * xi + w * w + I.potential + I.hx2 + I.v2


def state_norm(state: FullState, params: PhysicalParams, grid: Grid) -> float:
    """State-space norm of the deviation (xi, w, h - h*, v)."""
    I = integrals(state, params, grid)
    return math.sqrt(norm_sq_from_integrals(I, state.xi, state.w))


class Membership(str, Enum):
    IN_X = "in_X"
    IN_S_ONLY = "in_S_only"
    NOT_IN_S = "not_in_S"


@dataclass
class MembershipReport:
    status: Membership
    V: float | None
    R: float
    reasons: list


def in_state_space_X(state, params, gains, grid) -> MembershipReport:
    R = compute_R(params)
    reasons = state.violations(params, grid)
    if reasons:
        return MembershipReport(Membership.NOT_IN_S, None, R, reasons)
    try:
        V = clf_V(state, params, gains, grid)
    except DomainError as exc:
        return MembershipReport(Membership.NOT_IN_S, None, R, [str(exc)])
    status = Membership.IN_X if V < R else Membership.IN_S_ONLY
    return MembershipReport(status, V, R, [])


# --- proof constants --------------------------------------------------------


def _check_s(s, params):
    R = compute_R(params)
    if not 0.0 <= s < R:
        raise DomainError(f"argument must lie in [0, R) = [0, {R}), got {s}")


def Gamma(s: float, params: PhysicalParams, gains: Gains) -> float:
    """Dissipation-bound coefficient: V <= Gamma(V) * (dissipated quantities)."""
    _check_s(s, params)
    c = clf_scale(params)
    lo, hi = G_inv(-c * s, params), G_inv(c * s, params)
    L, q, k = params.L, gains.q, gains.k
    return max(
        3.0 * L * L * hi / (2.0 * math.pi**2 * lo),
        params.mu**2 / lo + params.g * L * L,
        q * k * k / 2.0,
        q / 2.0,
    )


def G1(s: float, params: PhysicalParams, gains: Gains) -> float:
    _check_s(s, params)
    lo = G_inv(-clf_scale(params) * s, params)
    Hm, q, k = params.H_max, gains.q, gains.k
    return 12.0 * Hm / min(
        3.0 * Hm * lo, 2.0 * params.mu**2, 3.0 * Hm * q * k * k, 2.0 * Hm * q, 12.0 * Hm * params.g
    )


def G2(s: float, params: PhysicalParams, gains: Gains) -> float:
    _check_s(s, params)
    lo = G_inv(-clf_scale(params) * s, params)
    q, k = gains.q, gains.k
    return max(1.5 * params.H_max, params.mu**2 / lo, 1.5 * q * k * k, q, params.g)


def theta_of(sigma: float, params: PhysicalParams) -> float:
    return sigma * params.g / (params.g + params.mu * sigma * params.L)


def b_of(sigma: float, params: PhysicalParams) -> float:
    p = params
    return 4.0 * p.m * p.L**2 * p.H_max / (p.mu * math.pi**2) * theta_of(sigma, p)


def k_bound(params: PhysicalParams, sigma: float, q: float, r: float) -> float:
    """Right-hand side of the strict gain condition k < q theta G_inv(-cr) / (b + G_inv(-cr))."""
    lo = G_inv(-clf_scale(params) * r, params)
    return q * theta_of(sigma, params) * lo / (b_of(sigma, params) + lo)


@dataclass(frozen=True)
class DerivedConstants:
    c: float
    R: float
    theta: float
    b: float
    h_lo_r: float
    h_hi_r: float
    eps_proof: float
    X_aux: float
    phi: float
    zeta: float
    gamma: float
    beta: float
    omega: float
    Gamma_r: float
    G1_r: float
    G2_r: float
    lam: float
    M: float

    def as_dict(self) -> dict:
        return asdict(self)

    @property
    def decay_rate_V(self) -> float:
        return self.omega / self.Gamma_r


def derived_constants(params: PhysicalParams, gains: Gains) -> DerivedConstants:
    """All constants of the decay estimate for admissible gains.

    Raises GainConditionViolated when k breaks the gain condition and
    DesignInfeasible when the resulting omega is not positive.
    """
    p, sg, q, k, r = params, gains.sigma, gains.q, gains.k, gains.r
    R = compute_R(p)
    if not 0.0 <= r < R:
        raise GainConditionViolated(f"budget r = {r} must lie in [0, R) with R = {R}")
    c = clf_scale(p)
    lo, hi = G_inv(-c * r, p), G_inv(c * r, p)
    theta = theta_of(sg, p)
    b = b_of(sg, p)
    bound = q * theta * lo / (b + lo)
    if not k < bound:
        raise GainConditionViolated(f"k = {k} must be < {bound}")

    eps = q - q / sg * theta * lo / (b + lo)
    X = p.mu * sg * p.L / (p.g + p.mu * sg * p.L) * lo
    phi = X / (2.0 * b + 2.0 * X) + 0.5
    zeta = X / (b * phi + (phi - 1.0) * X)
    gamma = k * (b + lo) / (q * theta * lo)
    beta = b * phi / (b * phi + (phi - 1.0) * X)
    omega = min(
        p.mu * p.g * (1.0 - phi),
        p.mu * (1.0 - beta / p.H_max * hi),
        q * k**3,
        q * q * (1.0 - gamma) * theta * lo / (b + lo),
    )
    assert theta < sg
    assert 0.0 < gamma < 1.0
    assert 0.0 < phi < 1.0 and 0.0 < eps < q and zeta > 0.0
    if not omega > 0:
        raise DesignInfeasible(
            f"omega = {omega:.6g} <= 0 (beta = {beta:.6g}, G_inv(cr) = {hi:.6g}, H_max = {p.H_max})"
        )
    Gr = Gamma(r, p, gains)
    g1, g2 = G1(r, p, gains), G2(r, p, gains)
    return DerivedConstants(
        c=c, R=R, theta=theta, b=b, h_lo_r=lo, h_hi_r=hi, eps_proof=eps, X_aux=X,
        phi=phi, zeta=zeta, gamma=gamma, beta=beta, omega=omega, Gamma_r=Gr,
        G1_r=g1, G2_r=g2, lam=omega / (2.0 * Gr), M=math.sqrt(g1 * g2),
    )
