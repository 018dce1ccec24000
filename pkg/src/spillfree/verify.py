"""Property checks on trajectories and on random admissible states.

Every statement backed by a theorem is a hard pass/fail check. Quantities the
theory says nothing about (for instance the actual decay rate) are reported in
``detail`` only.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .controller import HypothesisViolated, near_rest_constant
from .functionals import (
    DerivedConstants,
    G1,
    G2,
    Gains,
    Gamma,
    Membership,
    clf_from_integrals,
    in_state_space_X,
    integrals,
    level_bounds,
    norm_sq_from_integrals,
)
from .model import FullState, Grid, PhysicalParams, PositivityViolation, make_initial_condition
from .solver import TrajectoryRecord

MASS_RTOL = 1e-10


@dataclass
class CheckReport:
    name: str
    passed: bool
    worst_violation: float
    location: float | None
    tolerance_used: float
    status: str = ""
    detail: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.status:
            self.status = "pass" if self.passed else "fail"

    @classmethod
    def from_margin(cls, name, margin, location, tol, **detail):
        return cls(name, bool(margin >= -tol), float(margin), location, float(tol), detail=detail)

    @classmethod
    def skipped(cls, name, reason):
        return cls(name, True, 0.0, None, 0.0, status="skipped", detail={"reason": reason})

    def line(self) -> str:
        return (f"[{self.status.upper():7s}] {self.name}: margin={self.worst_violation:.3e} "
                f"tol={self.tolerance_used:.3e} at={self.location}")


def _argmin(margins, t):
    i = int(np.argmin(margins))
    return float(margins[i]), float(t[i])


def check_mass(traj: TrajectoryRecord, rtol: float = MASS_RTOL) -> CheckReport:
    m = traj.params.m
    err = np.abs(traj["mass"] - m) / m
    margin, loc = _argmin(-err, traj["t"])
    return CheckReport.from_margin("mass", margin, loc, rtol)


def check_spill_free(traj: TrajectoryRecord, params: PhysicalParams) -> CheckReport:
    """Wall levels stay strictly below H_max; the interior bound is in ``detail``."""
    t = traj["t"]
    wall = params.H_max - np.maximum(traj["h_left"], traj["h_right"])
    margin, loc = _argmin(wall, t)
    bad = np.nonzero(wall <= 0)[0]
    interior = check_interior_levels(traj, params)
    return CheckReport(
        "spill_free", bool(margin > 0), margin, loc, 0.0,
        detail={
            "first_violation_t": float(t[bad[0]]) if bad.size else None,
            "interior_margin": interior.worst_violation,
            "interior_passed": interior.passed,
        },
    )


def check_interior_levels(traj: TrajectoryRecord, params: PhysicalParams) -> CheckReport:
    """The stronger (conservative) requirement max_i h(i) < H_max."""
    t = traj["t"]
    margins = params.H_max - traj["h_max"]
    margin, loc = _argmin(margins, t)
    bad = np.nonzero(margins <= 0)[0]
    return CheckReport("spill_free_interior", bool(margin > 0), margin, loc, 0.0,
                       detail={"first_violation_t": float(t[bad[0]]) if bad.size else None})


def lyapunov_tolerance(traj: TrajectoryRecord, slack: float = 10.0) -> float:
    """Allowed growth rate of V: slack * (dt + dx^2) * V(0)."""
    dt = float(np.max(traj["dt"])) if len(traj) > 1 else 0.0
    return slack * (dt + traj.grid.dx**2) * traj["V"][0]


def check_lyapunov(traj: TrajectoryRecord, params: PhysicalParams, gains: Gains | None,
                   slack: float = 10.0) -> CheckReport:
    if gains is None or not traj.closed_loop:
        return CheckReport.skipped("lyapunov", "open-loop trajectory")
    V, t = traj["V"], traj["t"]
    if V[0] > gains.r:
        return CheckReport.skipped("lyapunov", f"V(0) = {V[0]:.6g} exceeds r = {gains.r:.6g}")
    if len(V) < 2:
        return CheckReport.skipped("lyapunov", "fewer than two records")
    tol = lyapunov_tolerance(traj, slack)
    rate = -np.diff(V) / np.diff(t)
    margin, loc = _argmin(rate, t[1:])
    return CheckReport.from_margin("lyapunov", margin, loc, tol)


def fitted_decay_rate(t, y, floor=1e-12):
    """Slope of -log(y) by least squares over the part of y above ``floor * y[0]``."""
    if y[0] <= 0:
        return None
    keep = y > floor * y[0]
    if keep.sum() < 3:
        return None
    slope = np.polyfit(t[keep], np.log(y[keep]), 1)[0]
    return float(-slope)


def check_envelope(traj: TrajectoryRecord, params: PhysicalParams, gains: Gains,
                   constants: DerivedConstants, tol: float = 0.05,
                   drift: float = 0.0) -> list[CheckReport]:
    """Exponential envelopes for V and for the state norm.

    ``drift`` adds ``drift * t`` (in units of V(0)) to the V envelope.
    """
    t, V, n = traj["t"], traj["V"], traj["norm_X"]
    rate_V = constants.omega / constants.Gamma_r
    reports = []
    if V[0] == 0:
        reports.append(CheckReport("envelope_V", True, 0.0, None, tol))
    else:
        bound = V[0] * (np.exp(-rate_V * t) + drift * t)
        margin, loc = _argmin(1.0 - V / bound, t)
        reports.append(CheckReport.from_margin(
            "envelope_V", margin, loc, tol,
            guaranteed_rate=rate_V, empirical_rate=fitted_decay_rate(t, V)))
    if n[0] == 0:
        reports.append(CheckReport("envelope_norm", True, 0.0, None, tol))
    else:
        bound = constants.M * np.exp(-constants.lam * t) * n[0]
        margin, loc = _argmin(1.0 - n / bound, t)
        reports.append(CheckReport.from_margin(
            "envelope_norm", margin, loc, tol,
            guaranteed_rate=constants.lam, empirical_rate=fitted_decay_rate(t, n)))
    return reports


def energy_identity_residuals(traj: TrajectoryRecord):
    """Relative residuals of the E and W balance laws along a run recorded every step.

    On each step the force is the held value ``f`` of the record that opens it,
    so the change of E over the step is compared with the trapezoid average of
    ``diss_E + f * P`` at its two ends (likewise for W with ``Phi``). Returns
    ``(res_E, res_W)``: the largest gap divided by the largest rate.
    """
    t, f = traj["t"], traj["f"]
    if len(t) < 3:
        raise ValueError("trajectory too short")
    dt = np.diff(t)
    out = []
    for name, diss, drive in (("E", "diss_E", "P"), ("W", "diss_W", "Phi")):
        D, P = traj[diss], traj[drive]
        lhs = np.diff(traj[name]) / dt
        rhs = 0.5 * (D[:-1] + D[1:]) + f[:-1] * 0.5 * (P[:-1] + P[1:])
        scale = np.max(np.abs(D + f * P))
        out.append(float(np.max(np.abs(lhs - rhs)) / scale) if scale > 0 else 0.0)
    return tuple(out)


def check_energy_identities(traj: TrajectoryRecord, params: PhysicalParams,
                            C: float = 20.0) -> list[CheckReport]:
    """Balance laws of E and W; the tolerance is ``C * (dt + dx^2)`` relative."""
    dt = float(np.max(np.diff(traj["t"])))
    tol = C * (dt + traj.grid.dx**2)
    res_E, res_W = energy_identity_residuals(traj)
    return [CheckReport.from_margin("energy_identity_E", -res_E, None, tol),
            CheckReport.from_margin("energy_identity_W", -res_W, None, tol)]


# --- static inequality battery --------------------------------------------------


def sample_states(n_samples, params, gains, grid, rng_seed, extra=(), max_tries=None):
    """Random states of X by rejection; candidates in ``extra`` are screened first."""
    rng = np.random.default_rng(rng_seed)
    hs = params.h_star
    accepted, rejected = [], 0
    for cand in extra:
        if in_state_space_X(cand, params, gains, grid).status is Membership.IN_X:
            accepted.append(cand)
        else:
            rejected += 1
    max_tries = max_tries or 50 * max(n_samples, 1)
    tries = 0
    while len(accepted) < n_samples and tries < max_tries:
        tries += 1
        kind = ("level_mode", "velocity_mode", "combined")[rng.integers(3)]
        # log-uniform amplitudes so the near-rest subset is populated
        amp = hs * 10 ** rng.uniform(-3.5, np.log10(0.6))
        vamp = math.sqrt(hs * params.g) * 10 ** rng.uniform(-3.5, 0)
        xi = rng.normal(scale=0.5)
        w = rng.normal(scale=0.3)
        try:
            s = make_initial_condition(params, grid, kind, amp * rng.choice((-1, 1)),
                                       int(rng.integers(1, 5)), xi, w, velocity_amplitude=vamp)
        except PositivityViolation:
            rejected += 1
            continue
        if in_state_space_X(s, params, gains, grid).status is Membership.IN_X:
            accepted.append(s)
        else:
            rejected += 1
    return accepted[:n_samples] if n_samples else [], rejected


def static_margins(state: FullState, params: PhysicalParams, gains: Gains, grid: Grid):
    """Relative slack of each static inequality for one state of X (None when not applicable)."""
    I = integrals(state, params, grid)
    V = clf_from_integrals(I, state.xi, state.w, params, gains)
    norm_sq = norm_sq_from_integrals(I, state.xi, state.w)
    lo, hi = level_bounds(V, params)
    sandwich = min(state.h.min() - lo, hi - state.h.max())
    diss = I.hx2 + I.hvx2 + state.xi**2 + (state.w + gains.k * state.xi) ** 2
    out = {
        "level_sandwich": sandwich,
        "dissipation_bound": (Gamma(V, params, gains) * diss - V) / max(V, 1e-300),
        "norm_lower": (norm_sq - V / G2(V, params, gains)) / max(norm_sq, 1e-300),
        "norm_upper": (V * G1(V, params, gains) - norm_sq) / max(norm_sq, 1e-300),
        "near_rest_bound": None,
    }
    rest = math.sqrt(norm_sq_from_integrals(I, 0.0, state.w))
    ball = min(params.h_star, params.H_max - params.h_star) / math.sqrt(params.L)
    if 0 < rest < ball:
        coef = near_rest_constant(params, rest, gains.q)
        bound = coef * rest**2 + 1.5 * gains.q * gains.k**2 * state.xi**2
        out["near_rest_bound"] = (bound - V) / max(V, 1e-300)
    return out


FAMILIES = {
    "level_sandwich": ("level_sandwich",),
    "dissipation_bound": ("dissipation_bound",),
    "norm_equivalence": ("norm_lower", "norm_upper"),
    "near_rest_bound": ("near_rest_bound",),
}


def check_static_inequalities(n_samples, params, gains, grid, rng_seed=42, extra=(),
                              tol=1e-12) -> list[CheckReport]:
    if n_samples == 0 and not extra:
        return [CheckReport(name, True, math.inf, None, tol, detail={"samples": 0})
                for name in FAMILIES]
    states, rejected = sample_states(n_samples, params, gains, grid, rng_seed, extra)
    rows = [static_margins(s, params, gains, grid) for s in states]
    reports = []
    for name, keys in FAMILIES.items():
        vals = [(row[k], i) for i, row in enumerate(rows) for k in keys if row[k] is not None]
        if not vals:
            reports.append(CheckReport(name, True, math.inf, None, tol, detail={"samples": 0}))
            continue
        worst, where = min(vals)
        fails = sum(v < -tol for v, _ in vals)
        reports.append(CheckReport.from_margin(
            name, worst, where, tol, samples=len({i for _, i in vals}), failures=fails,
            rejected=rejected))
    return reports


# --- grid refinement ------------------------------------------------------------


def restrict(h_fine: np.ndarray, v_fine: np.ndarray, N: int):
    """Average fine cells onto N coarse cells; inject v at the shared faces."""
    s = h_fine.size // N
    if s * N != h_fine.size:
        raise ValueError(f"fine grid ({h_fine.size} cells) is not a multiple of {N}")
    return h_fine.reshape(N, s).mean(axis=1), v_fine[::s].copy()


def profile_error(h, v, h_ref, v_ref, dx: float) -> float:
    """Discrete L2 distance of (h, v) to a reference already restricted to the same grid."""
    eh = math.sqrt(dx * float(np.sum((h - h_ref) ** 2)))
    dv = (v - v_ref) ** 2
    ev = math.sqrt(dx * float(np.sum(dv) - 0.5 * (dv[0] + dv[-1])))
    return eh + ev


def convergence_orders(finals, L: float):
    """Errors of each final state against the last (finest) one, and the observed orders.

    ``finals`` is a list of FullState on grids refined by a factor of two each time.
    """
    ref = finals[-1]
    errs = []
    for s in finals[:-1]:
        N = s.h.size
        h_ref, v_ref = restrict(ref.h, ref.v, N)
        errs.append(profile_error(s.h, s.v, h_ref, v_ref, L / N))
    orders = [math.log2(a / b) if b > 0 and a > 0 else math.inf for a, b in zip(errs, errs[1:])]
    return errs, orders
