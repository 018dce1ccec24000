import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spillfree.functionals import (
    G,
    G1,
    G2,
    G_inv,
    DesignInfeasible,
    GainConditionViolated,
    Gains,
    Gamma,
    Membership,
    b_of,
    clf_V,
    compute_R,
    derived_constants,
    energy_E,
    energy_W,
    in_state_space_X,
    k_bound,
    level_bounds,
    state_norm,
    theta_of,
)
from spillfree.model import (
    DomainError,
    FullState,
    Grid,
    PhysicalParams,
    equilibrium_state,
    make_initial_condition,
)


def cubic_inverse(y, hs=1.0):
    """Independent inverse of G: solve the cubic in s = sqrt(h) and pick the right branch."""
    c0 = 4.0 / 3.0 * hs**1.5
    coeffs = [2.0 / 3.0, 0.0, -2.0 * hs, c0 - y] if y >= 0 else [2.0 / 3.0, 0.0, -2.0 * hs, c0 + y]
    roots = np.roots(coeffs)
    real = roots[np.abs(roots.imag) < 1e-9].real
    if y >= 0:
        s = real[real >= math.sqrt(hs) - 1e-9].max()
    else:
        s = real[(real > 0) & (real <= math.sqrt(hs) + 1e-9)].min()
    return s * s


def profile(params, grid, h_fn, v_fn, xi=0.0, w=0.0):
    h = h_fn(grid.cell_centers)
    v = v_fn(grid.faces)
    v[0] = v[-1] = 0.0
    return FullState(xi=xi, w=w, h=h, v=v)


# --- G and its inverse ---------------------------------------------------------


def test_G_reference_values(unit2):
    assert G(1.0, unit2) == 0.0
    assert G(4.0, unit2) == pytest.approx(8.0 / 3.0, rel=1e-15)
    assert G(1e-14, unit2) == pytest.approx(-4.0 / 3.0, abs=1e-6)
    with pytest.raises(DomainError):
        G(0.0, unit2)


def test_G_vectorized_matches_scalar(unit2):
    hs = np.array([0.1, 0.5, 1.0, 2.0, 7.0])
    np.testing.assert_allclose(G(hs, unit2), [G(float(h), unit2) for h in hs], rtol=1e-15)


def test_G_derivative_by_central_differences(unit2):
    for h in (0.05, 0.3, 0.8, 1.3, 4.0, 40.0):
        d = 1e-6 * h
        fd = (G(h + d, unit2) - G(h - d, unit2)) / (2 * d)
        assert fd == pytest.approx(abs(h - 1.0) / math.sqrt(h), rel=1e-6)


def test_G_inv_reference_values(unit2):
    assert G_inv(0.0, unit2) == 1.0
    assert G_inv(8.0 / 3.0, unit2) == pytest.approx(4.0, rel=1e-14)
    assert G_inv(G(0.25, unit2), unit2) == pytest.approx(0.25, rel=1e-13)
    with pytest.raises(DomainError):
        G_inv(-4.0 / 3.0, unit2)


@pytest.mark.parametrize("y", [-1.3, -1.0, -0.5, -0.01, 0.01, 0.5, 3.0, 50.0])
def test_G_inv_against_cubic_roots(unit2, y):
    assert G_inv(y, unit2) == pytest.approx(cubic_inverse(y), rel=1e-10)


@given(st.floats(min_value=-2.0, max_value=2.0))
def test_G_inv_round_trip(log10_h):
    p = PhysicalParams(g=1, mu=1, L=1, m=1, H_max=2)
    h = 10.0**log10_h
    assert abs(G_inv(G(h, p), p) - h) <= 1e-10 * h


@given(st.floats(min_value=0.01, max_value=100), st.floats(min_value=0.01, max_value=100))
def test_G_strictly_increasing(a, b):
    p = PhysicalParams(g=1, mu=1, L=1, m=1, H_max=2)
    if a < b:
        assert G(a, p) < G(b, p)


def test_G_scales_with_h_star():
    p = PhysicalParams(g=1, mu=1, L=2, m=1, H_max=2)  # h* = 0.5
    assert G(0.5, p) == 0.0
    assert G_inv(G(0.9, p), p) == pytest.approx(0.9, rel=1e-12)


# --- R and level bounds -----------------------------------------------------


def test_R_reference_values(unit2, unit4):
    assert compute_R(unit4) == pytest.approx(4.0 / 3.0, rel=1e-14)
    assert compute_R(unit2) == pytest.approx(2.0 / 3.0 * (2 - math.sqrt(2)), rel=1e-14)
    assert compute_R(PhysicalParams(g=1, mu=2, L=1, m=1, H_max=4)) == pytest.approx(8 / 3, rel=1e-14)


def test_level_bounds(unit4):
    assert level_bounds(0.0, unit4) == (1.0, 1.0)
    lo, hi = level_bounds(0.5, unit4)
    assert lo == pytest.approx(cubic_inverse(-0.5), rel=1e-10)
    assert hi == pytest.approx(cubic_inverse(0.5), rel=1e-10)
    assert lo < 1.0 < hi
    prev = (1.0, 1.0)
    for V in np.linspace(0.05, 1.3, 12):
        cur = level_bounds(V, unit4)
        assert cur[0] < prev[0] and cur[1] > prev[1]
        prev = cur
    with pytest.raises(DomainError):
        level_bounds(4.0 / 3.0, unit4)


# --- energies, CLF and norm ----------------------------------------------------


def test_energies_vanish_at_equilibrium(unit2, grid50):
    s = equilibrium_state(unit2, grid50)
    assert energy_E(s, unit2, grid50) == 0.0
    assert energy_W(s, unit2, grid50) == 0.0
    assert clf_V(s, unit2, Gains(1, 2, 0.5), grid50) == 0.0


def test_E_kinetic_quadrature(unit2):
    grid = Grid(1.0, 200)
    s = profile(unit2, grid, lambda x: np.ones_like(x), lambda x: np.sin(np.pi * x))
    assert energy_E(s, unit2, grid) == pytest.approx(0.25, abs=1e-12)
    assert energy_W(s, unit2, grid) == pytest.approx(0.25, abs=1e-12)


def test_E_potential_quadrature(unit2):
    grid = Grid(1.0, 200)
    s = profile(unit2, grid, lambda x: 1 + 0.1 * np.cos(2 * np.pi * x), np.zeros_like)
    assert energy_E(s, unit2, grid) == pytest.approx(0.0025, rel=1e-12)


def test_W_against_fine_quadrature(unit2):
    x = np.linspace(0.0, 1.0, 400001)
    h = 1 + 0.1 * np.cos(2 * np.pi * x)
    hx = -0.2 * np.pi * np.sin(2 * np.pi * x)
    oracle = 0.5 * np.trapezoid(hx**2 / h, x) + 0.0025
    grid = Grid(1.0, 400)
    s = profile(unit2, grid, lambda x: 1 + 0.1 * np.cos(2 * np.pi * x), np.zeros_like)
    assert energy_W(s, unit2, grid) == pytest.approx(oracle, rel=1e-4)


def test_tank_terms_of_clf(unit2, grid50):
    gains = Gains(sigma=1, q=2, k=0.5)
    s = equilibrium_state(unit2, grid50, xi=1.0)
    assert clf_V(s, unit2, gains, grid50) == pytest.approx(0.5, rel=1e-15)
    s = equilibrium_state(unit2, grid50)
    s.w = 1.0
    assert clf_V(s, unit2, gains, grid50) == pytest.approx(1.0, rel=1e-15)


def test_state_norm(unit2):
    grid = Grid(1.0, 400)
    assert state_norm(equilibrium_state(unit2, grid, xi=3.0), unit2, grid) == 3.0
    assert state_norm(equilibrium_state(unit2, grid), unit2, grid) == 0.0
    s = profile(unit2, grid, lambda x: 1 + 0.1 * np.cos(2 * np.pi * x), np.zeros_like)
    assert state_norm(s, unit2, grid) == pytest.approx(math.sqrt(0.005 + 0.02 * np.pi**2), rel=1e-4)


def test_membership(unit2, grid50):
    gains = Gains(sigma=1, q=2, k=0.5)
    s = equilibrium_state(unit2, grid50)
    rep = in_state_space_X(s, unit2, gains, grid50)
    assert rep.status is Membership.IN_X and rep.V == 0.0
    s.v[0] = 0.1
    assert in_state_space_X(s, unit2, gains, grid50).status is Membership.NOT_IN_S
    # escalate the amplitude until V crosses R
    R = compute_R(unit2)
    for amp in np.linspace(0.05, 0.95, 19):
        s = make_initial_condition(unit2, grid50, "level_mode", amp, 1)
        rep = in_state_space_X(s, unit2, gains, grid50)
        if rep.status is Membership.IN_S_ONLY:
            assert rep.V >= R
            break
    else:
        pytest.fail("no amplitude pushed V above R")


# --- proof constants ---------------------------------------------------------


def test_Gamma_reference_values(unit4):
    gains = Gains(sigma=1, q=2, k=0.5)
    assert Gamma(0.0, unit4, gains) == pytest.approx(2.0, rel=1e-14)
    lo, hi = cubic_inverse(-0.3), cubic_inverse(0.3)
    expected = max(3 * hi / (2 * np.pi**2 * lo), 1 / lo + 1, 0.25, 1.0)
    assert Gamma(0.3, unit4, gains) == pytest.approx(expected, rel=1e-9)
    vals = [Gamma(s, unit4, gains) for s in np.linspace(0, 1.3, 30)]
    assert all(a <= b for a, b in zip(vals, vals[1:]))
    with pytest.raises(DomainError):
        Gamma(4.0 / 3.0, unit4, gains)
    with pytest.raises(DomainError):
        Gamma(-0.1, unit4, gains)


def test_G1_G2_reference_values(unit2):
    gains = Gains(sigma=1, q=2, k=0.5)
    assert G2(0.0, unit2, gains) == pytest.approx(3.0, rel=1e-14)
    assert G1(0.0, unit2, gains) == pytest.approx(12.0, rel=1e-14)
    s = np.linspace(0, 0.38, 20)
    g1 = [G1(x, unit2, gains) for x in s]
    g2 = [G2(x, unit2, gains) for x in s]
    assert all(a <= b for a, b in zip(g1, g1[1:]))
    assert all(a <= b for a, b in zip(g2, g2[1:]))


def test_theta_and_b(unit2):
    assert theta_of(1.0, unit2) == pytest.approx(0.5, rel=1e-15)
    assert b_of(1.0, unit2) == pytest.approx(4 / np.pi**2, rel=1e-14)


@given(st.floats(min_value=1e-3, max_value=1e3), st.floats(min_value=0.1, max_value=10))
def test_theta_below_sigma(sigma, mu):
    p = PhysicalParams(g=1, mu=mu, L=1, m=1, H_max=2)
    assert theta_of(sigma, p) < sigma


def test_constants_at_zero_budget(unit2):
    gains = Gains(sigma=1, q=2, k=0.5, r=0.0)
    dc = derived_constants(unit2, gains)
    b = 4 / np.pi**2
    assert dc.gamma == pytest.approx(0.5 * (b + 1) / (2 * 0.5), rel=1e-14)
    assert k_bound(unit2, 1, 2, 0.0) == pytest.approx(2 * 0.5 / (b + 1), rel=1e-14)
    assert 0 < dc.gamma < 1
    assert dc.lam == pytest.approx(dc.omega / (2 * dc.Gamma_r))
    assert dc.M == pytest.approx(math.sqrt(dc.G1_r * dc.G2_r))


def test_constants_reject_bad_gains(unit2):
    with pytest.raises(GainConditionViolated):
        derived_constants(unit2, Gains(sigma=1, q=2, k=0.72))
    with pytest.raises(GainConditionViolated):
        derived_constants(unit2, Gains(sigma=1, q=2, k=0.1, r=compute_R(unit2)))


def test_large_budget_is_infeasible(unit2):
    # the level cap rules out omega > 0 when r approaches R with H_max = 2
    r = 0.9 * compute_R(unit2)
    kb = k_bound(unit2, 1.0, 1.0, r)
    with pytest.raises(DesignInfeasible):
        derived_constants(unit2, Gains(sigma=1.0, q=1.0, k=0.5 * kb, r=r))
