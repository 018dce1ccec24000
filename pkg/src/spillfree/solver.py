"""Closed- and open-loop time integration on the staggered grid.

Mass is updated in flux form, momentum in the non-conservative form
``v_t + v v_x + g h_x = mu h^-1 (h v_x)_x + f`` at interior faces. Time
stepping is Heun's method with the force held over each step.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import discrete
from .controller import check_gain_condition, control_force, feedback
from .functionals import (
    Gains,
    clf_from_integrals,
    compute_R,
    integrals,
    norm_sq_from_integrals,
)
from .model import FullState, Grid, PhysicalParams, PositivityViolation

log = logging.getLogger(__name__)

OK, NEGATIVE_LEVEL, STALLED = 0, 1, 2
# a run whose stable step falls below this fraction of the initial one is declared stalled
STALL_FRACTION = 1e-6


@dataclass(frozen=True)
class SolverConfig:
    t_end: float
    cfl: float = 0.4
    record_every: int = 1
    scheme: str = "explicit_rk2"
    dt_max: float | None = None
    snapshot_times: tuple = ()
    lyapunov_slack: float = 10.0

    def __post_init__(self):
        if not 0 < self.cfl <= 1:
            raise ValueError(f"cfl must lie in (0, 1], got {self.cfl}")
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")
        if self.scheme != "explicit_rk2":
            raise ValueError(f"unsupported scheme {self.scheme!r}")
        if self.dt_max is not None and not self.dt_max > 0:
            raise ValueError("dt_max must be positive")


@njit(cache=True)
def _rhs_into(h, v, f, g, mu, dx, dh, dv):
    n = h.shape[0]
    rdx = 1.0 / dx
    flux_l = 0.0
    for i in range(n):
        flux_r = 0.5 * (h[i] + h[i + 1]) * v[i + 1] if i < n - 1 else 0.0
        dh[i] = (flux_l - flux_r) * rdx
        flux_l = flux_r
    dv[0] = 0.0
    dv[n] = 0.0
    s_l = (v[1] - v[0]) * rdx
    for j in range(1, n):
        s_r = (v[j + 1] - v[j]) * rdx
        adv = 0.5 * v[j] * (v[j + 1] - v[j - 1]) * rdx
        grav = g * (h[j] - h[j - 1]) * rdx
        visc = 2.0 * mu * (h[j] * s_r - h[j - 1] * s_l) * rdx / (h[j - 1] + h[j])
        dv[j] = f - adv - grav + visc
        s_l = s_r


@njit(cache=True)
def _rhs(h, v, f, g, mu, dx):
    dh = np.empty(h.shape[0])
    dv = np.empty(v.shape[0])
    _rhs_into(h, v, f, g, mu, dx, dh, dv)
    return dh, dv


@njit(cache=True)
def _stable_dt(h, v, g, mu, dx, cfl, dt_max):
    n = h.shape[0]
    h0 = 1.5 * h[0] - 0.5 * h[1]
    hn = 1.5 * h[n - 1] - 0.5 * h[n - 2]
    hmin = h[0]
    hmax = h[0]
    for i in range(n):
        hmin = min(hmin, h[i])
        hmax = max(hmax, h[i])
    vmax = 0.0
    for j in range(n + 1):
        vmax = max(vmax, abs(v[j]))
    # max|v| + sqrt(g max h_face) bounds every face's |v| + sqrt(g h_face)
    speed = vmax + math.sqrt(g * max(hmax, h0, hn))
    dt = min(dx * dx * hmin / (2.0 * mu * hmax), dx / speed)
    return min(cfl * dt, dt_max)


@njit(cache=True)
def _heun_into(h, v, xi, w, f, dt, g, mu, dx, work):
    """Advance (h, v) in place; returns (xi, w, status)."""
    dh1, dv1, dh2, dv2, h1, v1 = work
    _rhs_into(h, v, f, g, mu, dx, dh1, dv1)
    ok = True
    for i in range(h.shape[0]):
        h1[i] = h[i] + dt * dh1[i]
        ok = ok and h1[i] > 0.0
    if not ok:
        h[:] = h1
        return xi + dt * w, w - dt * f, NEGATIVE_LEVEL
    for j in range(v.shape[0]):
        v1[j] = v[j] + dt * dv1[j]
    _rhs_into(h1, v1, f, g, mu, dx, dh2, dv2)
    for i in range(h.shape[0]):
        h[i] += 0.5 * dt * (dh1[i] + dh2[i])
        ok = ok and h[i] > 0.0
    for j in range(1, v.shape[0] - 1):
        v[j] += 0.5 * dt * (dv1[j] + dv2[j])
    v[0] = 0.0
    v[v.shape[0] - 1] = 0.0
    # w is linear in t under a held force, so both stages agree
    xin = xi + dt * w - 0.5 * dt * dt * f
    return xin, w - dt * f, OK if ok else NEGATIVE_LEVEL


@njit(cache=True)
def _workspace(n):
    return (np.empty(n), np.empty(n + 1), np.empty(n), np.empty(n + 1),
            np.empty(n), np.empty(n + 1))


@njit(cache=True, nogil=True)
def _advance(h, v, xi, w, t, t_stop, max_steps, g, mu, dx, cfl, dt_max, dt_min,
             closed, sigma, q, k):
    """Up to ``max_steps`` steps in place on (h, v), never past ``t_stop``."""
    work = _workspace(h.shape[0])
    f = 0.0
    dt = 0.0
    steps = 0
    status = OK
    while steps < max_steps and t < t_stop:
        f = feedback(h, v, xi, w, dx, mu, sigma, q, k) if closed else 0.0
        dt = _stable_dt(h, v, g, mu, dx, cfl, dt_max)
        if dt < dt_min:
            status = STALLED
            break
        last = False
        # absorb a leftover sliver into this step instead of taking a tiny one
        if t + dt * (1.0 + 1e-6) >= t_stop:
            dt = t_stop - t
            last = True
        xi, w, status = _heun_into(h, v, xi, w, f, dt, g, mu, dx, work)
        t = t_stop if last else t + dt
        steps += 1
        if status != OK:
            break
    return xi, w, t, f, dt, steps, status


def semidiscrete_rhs(state: FullState, f: float, params: PhysicalParams, grid: Grid):
    """Time derivatives (dh, dv, dxi, dw) of the semi-discrete system."""
    if not np.all(state.h > 0):
        raise PositivityViolation("level must be positive")
    dh, dv = _rhs(state.h, state.v, float(f), params.g, params.mu, grid.dx)
    return dh, dv, state.w, -f


def stable_dt(state: FullState, params: PhysicalParams, grid: Grid, config: SolverConfig) -> float:
    dt_max = math.inf if config.dt_max is None else config.dt_max
    return float(_stable_dt(state.h, state.v, params.g, params.mu, grid.dx, config.cfl, dt_max))


def step(state: FullState, f: float, dt: float, params: PhysicalParams, grid: Grid) -> FullState:
    """One Heun step with the force ``f`` frozen."""
    if not np.all(state.h > 0):
        raise PositivityViolation("level must be positive")
    h, v = state.h.copy(), state.v.copy()
    xi, w, status = _heun_into(h, v, state.xi, state.w, float(f), float(dt),
                               params.g, params.mu, grid.dx, _workspace(grid.N))
    if status != OK:
        raise PositivityViolation(f"level became non-positive at t = {state.t + dt}")
    return FullState(xi=xi, w=w, h=h, v=v, t=state.t + dt)


COLUMNS = ("t", "xi", "w", "f", "V", "E", "W", "mass", "norm_X",
           "h_left", "h_right", "h_min", "h_max", "dt")
# predicted dE/dt and dW/dt from the balance laws, kept for the identity checks
BALANCE_COLUMNS = ("diss_E", "diss_W", "P", "Phi")


@dataclass
class TrajectoryRecord:
    """Recorded time series plus profile snapshots and in-loop flags."""

    params: PhysicalParams
    grid: Grid
    gains: Gains | None
    columns: dict = field(default_factory=lambda: {c: [] for c in COLUMNS + BALANCE_COLUMNS})
    snapshots: list = field(default_factory=list)  # (t, h, v) at requested times
    first_V_above_R: float | None = None
    first_spill: float | None = None
    first_V_increase: float | None = None
    failure: str | None = None
    steps: int = 0
    final: FullState | None = None

    def __getitem__(self, name) -> np.ndarray:
        return np.asarray(self.columns[name], dtype=float)

    def __len__(self):
        return len(self.columns["t"])

    @property
    def closed_loop(self) -> bool:
        return self.gains is not None

    def append(self, state: FullState, f: float, dt: float):
        p, grid = self.params, self.grid
        I = integrals(state, p, grid)
        E = 0.5 * I.kinetic + 0.5 * p.g * I.potential
        W = 0.5 * I.w_kinetic + 0.5 * p.g * I.potential
        # without gains there are no tank terms and V reduces to W + E
        V = clf_from_integrals(I, state.xi, state.w, p, self.gains) if self.gains else E + W
        h0, hL = discrete.wall_levels(state.h)
        row = dict(
            t=state.t, xi=state.xi, w=state.w, f=f, V=V, E=E, W=W, mass=state.mass(grid),
            norm_X=math.sqrt(norm_sq_from_integrals(I, state.xi, state.w)),
            h_left=h0, h_right=hL, h_min=float(state.h.min()), h_max=float(state.h.max()), dt=dt,
            diss_E=-p.mu * I.hvx2, diss_W=-p.mu * p.g * I.hx2,
            P=I.momentum, Phi=I.phi_integral,
        )
        for c in COLUMNS + BALANCE_COLUMNS:
            self.columns[c].append(float(row[c]))


def simulate(
    initial: FullState,
    params: PhysicalParams,
    gains: Gains | None,
    grid: Grid,
    config: SolverConfig,
) -> TrajectoryRecord:
    """Integrate from ``initial`` up to ``config.t_end``.

    ``gains=None`` runs open loop (f = 0). Flags are set, not raised, when V
    exceeds R, a wall level reaches H_max or V grows beyond the drift
    allowance. A non-positive level stops the run and sets ``failure``.
    """
    reasons = initial.violations(params, grid)
    if reasons:
        raise ValueError("initial state is not admissible: " + "; ".join(reasons))
    if gains is not None and not check_gain_condition(params, gains).ok:
        raise ValueError("gains violate the gain condition")

    closed = gains is not None
    sigma, q, k = (gains.sigma, gains.q, gains.k) if closed else (0.0, 0.0, 0.0)
    dt_max = math.inf if config.dt_max is None else config.dt_max
    R = compute_R(params)
    rec = TrajectoryRecord(params=params, grid=grid, gains=gains)

    state = initial.copy()
    f0 = control_force(state, params, gains, grid) if closed else 0.0
    rec.append(state, f0, 0.0)
    pending = sorted(float(s) for s in config.snapshot_times if 0 <= s <= config.t_end)
    while pending and pending[0] <= state.t:
        rec.snapshots.append((state.t, state.h.copy(), state.v.copy()))
        pending.pop(0)

    h, v, xi, w, t = state.h.copy(), state.v.copy(), state.xi, state.w, state.t
    dt_min = STALL_FRACTION * _stable_dt(h, v, params.g, params.mu, grid.dx, config.cfl, dt_max)
    V0 = rec.columns["V"][0]
    while t < config.t_end:
        t_stop = min(config.t_end, pending[0]) if pending else config.t_end
        xi, w, t, f, dt, n, status = _advance(
            h, v, xi, w, t, t_stop, config.record_every, params.g, params.mu, grid.dx,
            config.cfl, dt_max, dt_min, closed, sigma, q, k,
        )
        rec.steps += int(n)
        cur = FullState(xi=float(xi), w=float(w), h=h, v=v, t=float(t))
        if status != OK:
            if status == STALLED:
                rec.failure = f"time step collapsed at t = {t:.6g} (min level {h.min():.3g})"
            else:
                rec.failure = f"non-positive level at t = {t:.6g}"
            log.warning(rec.failure)
            break
        rec.append(cur, control_force(cur, params, gains, grid) if closed else 0.0, dt)
        if pending and t >= pending[0]:
            rec.snapshots.append((float(t), h.copy(), v.copy()))
            pending.pop(0)
        _update_flags(rec, R, config.lyapunov_slack * (dt + grid.dx**2) * V0)
    rec.final = FullState(xi=float(xi), w=float(w), h=h.copy(), v=v.copy(), t=float(t))
    return rec


def _update_flags(rec: TrajectoryRecord, R: float, tol_rate: float):
    c = rec.columns
    t, V = c["t"][-1], c["V"][-1]
    if rec.closed_loop and rec.first_V_above_R is None and V >= R:
        rec.first_V_above_R = t
    if rec.first_spill is None and max(c["h_left"][-1], c["h_right"][-1]) >= rec.params.H_max:
        rec.first_spill = t
    if rec.closed_loop and rec.first_V_increase is None and len(c["t"]) > 1:
        dtr = t - c["t"][-2]
        if V - c["V"][-2] > tol_rate * dtr:
            rec.first_V_increase = t
