import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from incubation.asymptotics import (
    assemble_system,
    asymptotic_variance,
    conditional_score_mean,
    empirical_variance,
    equation_residuals,
    mean_theta,
    model_cdf,
    score_theta,
    second_moment,
    solve_phi,
)
from incubation.bootstrap import SimulationConfig
from incubation.smooth import kernel_derivative

CONFIG = SimulationConfig()
G = model_cdf(CONFIG)


@pytest.fixture(scope="module")
def sol6():
    return solve_phi(G, 6.0, 3.4)


@pytest.fixture(scope="module")
def coarse6():
    return solve_phi(G, 6.0, 3.4, delta=0.1)


def test_phi_solution_properties(sol6):
    assert sol6.residual <= 1e-8
    assert np.max(np.abs(equation_residuals(sol6))) <= 1e-8
    assert np.all(sol6.phi[sol6.grid >= 20] == 0)
    assert sol6.phi[0] == 0
    # one sign change, close to the target point
    inner = sol6.phi[(sol6.grid > 0) & (sol6.grid < 20)]
    signs = np.sign(inner[np.abs(inner) > 1e-8 * np.abs(inner).max()])
    changes = np.flatnonzero(np.diff(signs))
    assert changes.size == 1
    w_change = sol6.grid[1:][(sol6.grid[1:] < 20)][changes[0]]
    assert abs(w_change - 6.0) < 3.4


def test_phi_zero_rhs():
    sol = solve_phi(G, 40.0, 3.4, delta=0.25)
    assert np.all(sol.phi == 0)


def test_phi_grid_refinement(sol6, coarse6):
    common = coarse6.grid[(coarse6.grid > 0) & (coarse6.grid < 20)]
    fine = np.interp(common, sol6.grid, sol6.phi)
    coarse = np.interp(common, coarse6.grid, coarse6.phi)
    assert np.max(np.abs(fine - coarse)) < 0.01 * np.max(np.abs(fine))


def test_iteration_agrees_with_direct(coarse6):
    it = solve_phi(G, 6.0, 3.4, delta=0.1, method="iteration")
    assert it.iterations > 0
    assert np.max(np.abs(it.phi - coarse6.phi)) < 1e-6


def test_solve_phi_rejects_non_cdf():
    with pytest.raises(ValueError):
        solve_phi(lambda x: 0.5 * np.ones_like(x), 6.0, 3.4, delta=0.5)
    with pytest.raises(ValueError):
        solve_phi(lambda x: np.clip(1 - x / 20, 0, 1), 6.0, 3.4, delta=0.5)
    with pytest.raises(ValueError):
        solve_phi(G, 6.0, 3.4, method="gmres")


def test_score_theta_examples(sol6):
    assert score_theta(10.0, 25.0, 1, sol6) == 0.0
    # delta = 0 beyond the support of G: both G values are 1, both phi values 0
    assert score_theta(2.0, 45.0, 0, sol6) == 0.0
    k = int(round(6.0 / sol6.delta))
    assert_allclose(score_theta(8.0, 6.0, 1, sol6), sol6.phi[k] / G(np.array(6.0)), rtol=1e-12)
    s, e = 7.3, 2.6
    phi = lambda x: np.interp(x, sol6.grid, sol6.phi)
    expected = (phi(s) - phi(s - e)) / (G(np.array(s)) - G(np.array(s - e)))
    assert_allclose(score_theta(e, s, 0, sol6), expected, rtol=1e-12)


def test_mean_theta_vanishes(sol6):
    assert abs(mean_theta(sol6)) <= 1e-4


def test_zero_phi_has_zero_moments(sol6):
    zero = sol6.scaled(0.0)
    assert mean_theta(zero) == 0.0
    assert asymptotic_variance(zero, 1000) == 0.0


def test_scaling(sol6):
    # doubling the right-hand side doubles phi (see test_linearity_in_rhs)
    twice = sol6.scaled(2.0)
    assert_allclose(second_moment(twice), 4 * second_moment(sol6), rtol=1e-12)
    assert_allclose(mean_theta(twice), 2 * mean_theta(sol6), atol=1e-15)
    assert abs(mean_theta(twice)) <= 1e-4


def test_linearity_in_rhs(coarse6):
    # the right-hand side is linear in the kernel derivative, so the two-point sum solves the summed equation
    other = solve_phi(G, 9.0, 3.4, delta=0.1)
    A, r1 = assemble_system(G, 6.0, 3.4, 30, 20, 0.1)
    _, r2 = assemble_system(G, 9.0, 3.4, 30, 20, 0.1)
    both = np.linalg.solve(A, r1 + r2)
    assert_allclose(both, coarse6.phi[1:200] + other.phi[1:200], rtol=1e-8, atol=1e-12)


@pytest.mark.parametrize("t, expected", [(2.0, 0.001528899), (6.0, 0.004275926)])
def test_variance_table_values(t, expected):
    sol = solve_phi(G, t, 3.4)
    assert_allclose(asymptotic_variance(sol, 1000), expected, rtol=0.05)


def test_variance_s_range(sol6):
    grid = second_moment(sol6, "grid")
    full = second_moment(sol6, "full")
    assert full >= grid > 0
    with pytest.raises(ValueError):
        second_moment(sol6, "half")
    with pytest.raises(ValueError):
        asymptotic_variance(sol6, 0)


def test_integrated_equation_consistency(coarse6):
    # E[theta | W = w] is K_h(w - t) up to a constant, so its w-derivative
    # must reproduce the kernel derivative
    for w in (3.0, 5.0, 7.5, 9.0):
        d = 0.2
        lhs = (conditional_score_mean(coarse6, w + d) - conditional_score_mean(coarse6, w - d)) / (2 * d)
        rhs = kernel_derivative((w - 6.0) / 3.4) / 3.4**2
        assert abs(lhs - rhs) < 0.02 * 0.15


def test_empirical_variance_small_run():
    config = SimulationConfig(n=200, seed=0)
    a = empirical_variance(config, [6.0], h=3.4, n_sims=4, seed=1, with_asymptotic=False)
    b = empirical_variance(config, [6.0], h=3.4, n_sims=4, seed=1, with_asymptotic=False)
    assert_array_equal(a.empirical, b.empirical)
    assert a.empirical[0] > 0
    assert a.n_dropped == 0
    assert a.to_csv().splitlines()[0] == "t,empirical,asymptotic"
    with pytest.raises(ValueError):
        empirical_variance(config, [6.0], n_sims=1)


def test_phi_csv(coarse6):
    lines = coarse6.to_csv().splitlines()
    assert lines[0] == "w,phi"
    assert len(lines) == coarse6.grid.size + 1
