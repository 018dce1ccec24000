"""Feedback law, gain admissibility and the finite-time transfer planner."""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict

from numba import njit

from . import discrete
from .functionals import (
    DerivedConstants,
    DesignInfeasible,
    Gains,
    GainConditionViolated,
    compute_R,
    derived_constants,
    integrals,
    k_bound,
    norm_sq_from_integrals,
)
from .model import FullState, Grid, PhysicalParams

# planner search grid: fractions of R, multiples of sqrt(g/L), fractions of the q cap
R_LADDER = tuple(round(0.05 * i, 2) for i in range(19, 0, -1))
SIGMA_LADDER = (0.1, 0.3, 1.0, 3.0, 10.0)
Q_LADDER = (1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125)
K_SAFETY = 0.95


class HypothesisViolated(ValueError):
    pass


class ToleranceTooLarge(ValueError):
    pass


class NoFeasibleGain(ValueError):
    pass


@njit(cache=True)
def feedback(h, v, xi, w, dx, mu, sigma, q, k):
    # only the momentum, the wall levels, xi and w enter
    p = discrete.momentum(h, v, dx)
    h0, hL = discrete.wall_levels(h)
    return -sigma * (2.0 * p + mu * (hL - h0) - q * (w + k * xi))


def control_force(state: FullState, params: PhysicalParams, gains: Gains, grid: Grid) -> float:
    """Force command from the four measured quantities (xi, w, momentum, wall level jump)."""
    return float(
        feedback(state.h, state.v, state.xi, state.w, grid.dx, params.mu,
                 gains.sigma, gains.q, gains.k)
    )


@dataclass(frozen=True)
class GainCheck:
    ok: bool
    bound: float
    margin: float


def check_gain_condition(params: PhysicalParams, gains: Gains) -> GainCheck:
    bound = k_bound(params, gains.sigma, gains.q, gains.r)
    margin = bound - gains.k
    return GainCheck(ok=margin > 0, bound=bound, margin=margin)


def near_rest_constant(params: PhysicalParams, epsilon: float, q: float | None = None) -> float:
    """max(mu^2/(h* - eps sqrt(L)), g, 3 H_max / 2[, q])."""
    p = params
    vals = [p.mu**2 / (p.h_star - epsilon * math.sqrt(p.L)), p.g, 1.5 * p.H_max]
    if q is not None:
        vals.append(q)
    return max(vals)


def check_tolerance(params: PhysicalParams, epsilon: float) -> None:
    p = params
    ball = min(p.h_star, p.H_max - p.h_star) / math.sqrt(p.L)
    if not 0 < epsilon < ball:
        raise ToleranceTooLarge(
            f"epsilon = {epsilon} must satisfy 0 < epsilon < min(h*, H_max - h*)/sqrt(L) = {ball}"
        )
    lhs = epsilon**2 * near_rest_constant(p, epsilon)
    R = compute_R(p)
    if not lhs < R:
        raise ToleranceTooLarge(
            f"epsilon is not small enough: eps^2 * max(...) = {lhs} must be < R = {R}"
        )


def prop1_upper_bound(state, params, gains, grid, epsilon) -> float:
    """Upper bound on V for a state that is near rest apart from its position error."""
    p = params
    check_tolerance_ball(p, epsilon)
    I = integrals(state, p, grid)
    rest_norm_sq = norm_sq_from_integrals(I, 0.0, state.w)
    if math.sqrt(rest_norm_sq) > epsilon:
        raise HypothesisViolated(
            f"state is not in the epsilon-ball: norm {math.sqrt(rest_norm_sq)} > {epsilon}"
        )
    coef = near_rest_constant(p, epsilon, gains.q)
    return coef * rest_norm_sq + 1.5 * gains.q * gains.k**2 * state.xi**2


def check_tolerance_ball(params, epsilon):
    ball = min(params.h_star, params.H_max - params.h_star) / math.sqrt(params.L)
    if not 0 < epsilon < ball:
        raise HypothesisViolated(f"epsilon = {epsilon} must lie in (0, {ball})")


@dataclass(frozen=True)
class TransferPlan:
    gains: Gains
    constants: DerivedConstants
    T: float
    epsilon: float
    xi0: float
    k_bound_gain: float
    k_bound_start: float
    V0_bound: float

    def as_dict(self) -> dict:
        d = asdict(self)
        d["k_bound_start"] = None if math.isinf(self.k_bound_start) else self.k_bound_start
        return d


def transfer_time(M: float, lam: float, xi0: float, epsilon: float) -> float:
    return math.log((M * abs(xi0) + M * epsilon) / epsilon) / lam


def plan_transfer(xi0: float, epsilon: float, params: PhysicalParams) -> TransferPlan:
    """Pick (r, sigma, q, k) and the settling time T for a near-rest to near-rest move.

    Every combination on the fixed (r, sigma, q) grid is tried; k is set to 95 %
    of the tighter of its two upper bounds and the admissible design with the
    shortest T wins (first one on ties, so plans are reproducible).
    """
    p = params
    check_tolerance(p, epsilon)
    R = compute_R(p)
    q_cap = near_rest_constant(p, epsilon)
    best = None
    for frac in R_LADDER:
        r = frac * R
        if not epsilon**2 * q_cap < r:
            continue
        for qf in Q_LADDER:
            q = qf * q_cap
            room = r - epsilon**2 * near_rest_constant(p, epsilon, q)
            if room <= 0:
                continue
            kb37 = math.inf if xi0 == 0 else math.sqrt(2.0 / (3.0 * q)) * math.sqrt(room) / abs(xi0)
            for mult in SIGMA_LADDER:
                sigma = mult * math.sqrt(p.g / p.L)
                kb27 = k_bound(p, sigma, q, r)
                k = K_SAFETY * min(kb27, kb37)
                gains = Gains(sigma=sigma, q=q, k=k, r=r)
                try:
                    const = derived_constants(p, gains)
                except (DesignInfeasible, GainConditionViolated):
                    continue
                T = transfer_time(const.M, const.lam, xi0, epsilon)
                if best is None or T < best.T:
                    V0 = near_rest_constant(p, epsilon, q) * epsilon**2 + 1.5 * q * k * k * xi0 * xi0
                    best = TransferPlan(gains, const, T, epsilon, xi0, kb27, kb37, V0)
    if best is None:
        raise NoFeasibleGain(
            f"no admissible (r, sigma, q, k) on the search grid for epsilon = {epsilon}, xi0 = {xi0}"
        )
    return best
