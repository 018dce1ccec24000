import math

import numpy as np
import pytest

from spillfree.functionals import Gains, compute_R
from spillfree.model import (
    Grid,
    PhysicalParams,
    PositivityViolation,
    equilibrium_state,
    make_initial_condition,
)
from spillfree.solver import COLUMNS, SolverConfig, semidiscrete_rhs, simulate, stable_dt, step


def test_rhs_vanishes_at_equilibrium(unit2, grid50):
    dh, dv, dxi, dw = semidiscrete_rhs(equilibrium_state(unit2, grid50), 0.0, unit2, grid50)
    assert not dh.any() and not dv.any() and dxi == 0 and dw == 0


def test_rhs_uniform_force(unit2, grid50):
    dh, dv, dxi, dw = semidiscrete_rhs(equilibrium_state(unit2, grid50), 0.7, unit2, grid50)
    assert not dh.any()
    np.testing.assert_array_equal(dv[1:-1], 0.7)
    assert dv[0] == 0.0 and dv[-1] == 0.0
    assert dw == -0.7


def test_rhs_advection_inviscid_limit():
    p = PhysicalParams(g=1, mu=1e-12, L=1, m=1, H_max=2)
    A = 0.3
    for N, tol in ((100, 2e-4), (200, 5e-5)):
        grid = Grid(1.0, N)
        s = equilibrium_state(p, grid)
        s.v = A * np.sin(np.pi * grid.faces)
        s.v[0] = s.v[-1] = 0.0
        _, dv, _, _ = semidiscrete_rhs(s, 0.0, p, grid)
        exact = -A * A * np.pi / 2 * np.sin(2 * np.pi * grid.faces)
        assert np.max(np.abs(dv[1:-1] - exact[1:-1])) < tol


def test_mass_equation_is_conservative(unit2, grid50):
    s = make_initial_condition(unit2, grid50, "combined", 0.3, 2)
    dh, *_ = semidiscrete_rhs(s, 1.3, unit2, grid50)
    assert abs(dh.sum()) < 1e-13


def test_stable_dt_at_equilibrium(unit2):
    cfg = SolverConfig(t_end=1.0, cfl=0.5)
    for N in (20, 40):
        grid = Grid(1.0, N)
        dx = grid.dx
        dt = stable_dt(equilibrium_state(unit2, grid), unit2, grid, cfg)
        assert dt == pytest.approx(0.5 * min(dx, dx * dx / 2), rel=1e-15)
    coarse = stable_dt(equilibrium_state(unit2, Grid(1, 20)), unit2, Grid(1, 20), cfg)
    fine = stable_dt(equilibrium_state(unit2, Grid(1, 40)), unit2, Grid(1, 40), cfg)
    assert coarse / fine == pytest.approx(4.0, rel=1e-12)


def test_stable_dt_clamped(unit2, grid50):
    s = make_initial_condition(unit2, grid50, "combined", 0.5, 3)
    dt = stable_dt(s, unit2, grid50, SolverConfig(t_end=1.0, dt_max=1e-6))
    assert 0 < dt <= 1e-6


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(t_end=1.0, cfl=1.5)
    with pytest.raises(ValueError):
        SolverConfig(t_end=1.0, scheme="implicit")


def test_step_keeps_equilibrium(unit2, grid50):
    s = equilibrium_state(unit2, grid50, xi=0.4)
    out = step(s, 0.0, 1e-3, unit2, grid50)
    np.testing.assert_array_equal(out.h, s.h)
    np.testing.assert_array_equal(out.v, s.v)
    assert out.xi == 0.4 and out.w == 0.0 and out.t == 1e-3


def test_step_uniform_force(unit2, grid50):
    c0, dt = 0.5, 1e-5
    s = equilibrium_state(unit2, grid50)
    # forward-Euler substage by hand
    _, dv, _, dw = semidiscrete_rhs(s, c0, unit2, grid50)
    np.testing.assert_allclose(s.v[1:-1] + dt * dv[1:-1], c0 * dt, rtol=1e-15)
    out = step(s, c0, dt, unit2, grid50)
    assert out.w == -c0 * dt
    assert out.xi == pytest.approx(-0.5 * c0 * dt * dt, abs=1e-20)
    # away from the walls the profile is still uniform to O(dt^2)
    np.testing.assert_allclose(out.v[3:-3], c0 * dt, atol=dt * dt)
    assert out.v[0] == 0.0 and out.v[-1] == 0.0


def test_mass_after_many_steps(unit2, grid50):
    s = make_initial_condition(unit2, grid50, "combined", 0.4, 2, velocity_amplitude=0.3)
    cfg = SolverConfig(t_end=1.0, cfl=0.4)
    for _ in range(10_000):
        s = step(s, 0.2, stable_dt(s, unit2, grid50, cfg), unit2, grid50)
    assert abs(s.mass(grid50) - 1.0) < 1e-12


def test_step_rejects_nonpositive_level(unit2, grid50):
    s = make_initial_condition(unit2, grid50, "velocity_mode", 0.0, 1, velocity_amplitude=5.0)
    with pytest.raises(PositivityViolation):
        step(s, 0.0, 1.0, unit2, grid50)


def test_closed_loop_equilibrium_is_constant(unit2, grid50):
    gains = Gains(sigma=1.0, q=0.75, k=0.2, r=0.1)
    traj = simulate(equilibrium_state(unit2, grid50), unit2, gains, grid50,
                    SolverConfig(t_end=0.1, record_every=5))
    assert not traj["V"].any() and not traj["f"].any()
    np.testing.assert_array_equal(traj.final.h, 1.0)
    assert traj.first_spill is None and traj.failure is None


def test_open_loop_energy_decays(unit2, grid50):
    s = make_initial_condition(unit2, grid50, "velocity_mode", 0.0, 1, velocity_amplitude=0.3)
    traj = simulate(s, unit2, None, grid50, SolverConfig(t_end=1.0, record_every=20))
    E = traj["E"]
    assert np.all(np.diff(E) <= 1e-15)
    assert np.max(np.abs(traj["mass"] - 1.0)) < 1e-12
    np.testing.assert_allclose(traj["V"], traj["E"] + traj["W"])


def test_certified_closed_loop_decreases_V(unit4, grid50, certified_gains):
    s = make_initial_condition(unit4, grid50, "combined", 0.1, 1, xi0=0.2, velocity_amplitude=0.1)
    traj = simulate(s, unit4, certified_gains, grid50, SolverConfig(t_end=2.0, record_every=10))
    assert traj["V"][0] <= certified_gains.r
    assert traj.first_V_increase is None and traj.first_spill is None
    assert traj.first_V_above_R is None
    assert traj["V"][-1] < 0.2 * traj["V"][0]


def test_trajectory_layout_and_snapshots(unit2, grid50):
    s = make_initial_condition(unit2, grid50, "level_mode", 0.1, 1)
    cfg = SolverConfig(t_end=0.05, record_every=7, snapshot_times=(0.0, 0.0123, 0.05, 9.0))
    traj = simulate(s, unit2, None, grid50, cfg)
    assert set(COLUMNS) <= set(traj.columns)
    assert [t for t, _, _ in traj.snapshots] == [0.0, 0.0123, 0.05]
    assert traj["t"][-1] == 0.05
    assert traj.steps >= len(traj) - 1


def test_simulate_rejects_bad_inputs(unit2, grid50):
    s = equilibrium_state(unit2, grid50)
    s.v[0] = 1.0
    with pytest.raises(ValueError, match="not admissible"):
        simulate(s, unit2, None, grid50, SolverConfig(t_end=0.1))
    with pytest.raises(ValueError, match="gain condition"):
        simulate(equilibrium_state(unit2, grid50), unit2, Gains(1.0, 2.0, 5.0), grid50,
                 SolverConfig(t_end=0.1))


def test_run_is_deterministic(unit4, grid50, certified_gains):
    s = make_initial_condition(unit4, grid50, "combined", 0.1, 2, xi0=0.1)
    cfg = SolverConfig(t_end=0.3, record_every=50)
    a = simulate(s, unit4, certified_gains, grid50, cfg)
    b = simulate(s, unit4, certified_gains, grid50, cfg)
    for c in COLUMNS:
        np.testing.assert_array_equal(a[c], b[c])
    assert math.isclose(compute_R(unit4), 4 / 3)
