from __future__ import annotations

import math

import numpy as np
import pytest

from gmclab.errors import EpsilonUnderResolved, RateNotNegative
from gmclab.gmc import (
    MomentDecay,
    c_beta,
    chaos_cells,
    chaos_pairing_fn,
    check_decay,
    choose_p,
    contour_integral,
    critical_beta,
    domain_A_contains,
    fourth_moment_oracle,
    increment_moment_decay,
    mollifier_matrix,
    mollify,
    pair_with_test_function,
    second_moment_oracle,
)
from gmclab.grid import GridSpec
from gmclab.kernels import kernel_matrix
from gmclab.sampler import sample_direct
from gmclab.stats import mean_check


def test_mollify_keeps_constants():
    grid = GridSpec(1, 32, 0.5)
    X = np.full((3, 32), 2.5)
    x_eps, var = mollify(X, grid, 0.1, np.eye(32))
    assert np.allclose(x_eps, 2.5)
    m = mollifier_matrix(grid, 0.1)
    assert np.allclose(var, np.sum(m * m, axis=1))
    assert np.allclose(m.sum(axis=1), 1.0)


def test_mollify_needs_resolution():
    with pytest.raises(EpsilonUnderResolved):
        mollifier_matrix(GridSpec(1, 8, 0.5), 0.1)


def test_beta_zero_cells_have_cell_mass(rng):
    X = rng.standard_normal((4, 10))
    mu = chaos_cells(X, 1.0, 0.0, cell_volume=0.1)
    assert np.allclose(mu.masses(), 0.1)
    assert np.allclose(mu.total(), 1.0)


def test_pairing_is_linear(rng):
    X = rng.standard_normal((5, 12))
    mu = chaos_cells(X, 1.0, 0.6 + 0.3j, cell_volume=0.25)
    phi, psi = rng.standard_normal(12), rng.standard_normal(12)
    lhs = pair_with_test_function(mu, 2 * phi - 3 * psi)
    rhs = 2 * pair_with_test_function(mu, phi) - 3 * pair_with_test_function(mu, psi)
    assert np.allclose(lhs, rhs, rtol=1e-12)
    direct = np.sum(phi * np.exp((0.6 + 0.3j) * X - 0.5 * (0.6 + 0.3j) ** 2) * 0.25, axis=1)
    assert np.allclose(pair_with_test_function(mu, phi), direct, rtol=1e-12)


def test_pairing_survives_large_exponents():
    X = np.array([[700.0, 699.0]])
    mu = chaos_cells(X, 0.0, 1.0)
    assert np.isfinite(mu.log_abs).all()
    assert pair_with_test_function(mu, 1.0)[0] == pytest.approx(math.exp(700) * (1 + math.exp(-1)), rel=1e-14)


def test_critical_modes(rng):
    X = rng.standard_normal((3, 6))
    with pytest.raises(ValueError):
        chaos_cells(X, 1.0, 0.5, "seneta_heyde", level=2.0)
    with pytest.raises(ValueError):
        chaos_cells(X, 1.0, 0.0, "derivative")
    with pytest.raises(ValueError):
        chaos_cells(X, 1.0, 0.0, "bogus")
    mu = chaos_cells(X, 1.0, 0.0, "derivative", level=1.0)
    assert mu.beta == pytest.approx(critical_beta(1))
    expected = (math.sqrt(2) - X) * np.exp(math.sqrt(2) * X - 1.0)
    assert np.allclose(mu.masses(), expected)
    sh = chaos_cells(X, 1.0, 0.0, "seneta_heyde", level=4.0)
    assert np.allclose(sh.masses(), 2.0 * np.exp(math.sqrt(2) * X - 1.0))


def test_second_moment_oracle_trivial_cases(rng):
    phi = rng.standard_normal(6)
    C = rng.standard_normal((6, 6))
    assert second_moment_oracle(C, 0.0, phi, 0.5) == pytest.approx(0.25 * phi.sum() ** 2)
    assert second_moment_oracle(np.zeros((6, 6)), 1.3, phi, 0.5) == pytest.approx(0.25 * phi.sum() ** 2)
    assert fourth_moment_oracle(np.zeros((6, 6)), 0.8, phi, 0.5) == pytest.approx((0.5 * phi.sum()) ** 4)


def test_second_moment_oracle_against_monte_carlo(bump1):
    grid = GridSpec(1, 32, 0.5)
    C = kernel_matrix(bump1, grid, "Y", None, 0.0, 3.0)
    X = sample_direct(C, 10**5, 11)
    phi = 1 + np.cos(2 * math.pi * grid.axis())
    mu = chaos_cells(X, np.diag(C), 0.7, grid=grid)
    val = np.abs(pair_with_test_function(mu, phi)) ** 2
    rep = mean_check(val[:, None], np.array([second_moment_oracle(C, 0.7, phi, grid.cell_volume)]))
    assert rep.ok, rep


def test_pairing_function_conjugation(rng):
    X = rng.standard_normal((3, 8))
    f = chaos_pairing_fn(X, 1.0, np.ones(8), 0.125)
    b = 0.4 + 0.7j
    assert np.allclose(f(b.conjugate()), np.conj(f(b)))


def test_contour_integral():
    integral, _ = contour_integral(lambda b: np.exp(b) * np.ones(2), 0.3, 0.5, 32)
    assert np.max(np.abs(integral)) < 1e-14
    integral, scale = contour_integral(lambda b: np.array([1.0 / (b - 0.3)]), 0.3, 0.5, 16)
    assert integral[0] == pytest.approx(2j * math.pi)
    assert scale[0] == pytest.approx(2 * math.pi)


def test_domain_A():
    for d in (1, 2, 3):
        bc = math.sqrt(2 * d)
        assert domain_A_contains(0.0, d)
        assert domain_A_contains(bc - 1e-6, d)
        assert domain_A_contains(-(bc - 1e-6), d)
        assert not domain_A_contains(bc, d)
        assert not domain_A_contains(1.01j * math.sqrt(d), d)
        assert domain_A_contains(0.99j * math.sqrt(d), d)


def test_c_beta_and_choose_p():
    assert c_beta(0.5, 1.5, 1) == pytest.approx(0.75 * 0.25 / 2 - 0.5)
    p, c = choose_p(0.5, 1)
    assert 1 < p < 2 and c < 0
    assert c == pytest.approx(min(c_beta(0.5, q, 1) for q in np.linspace(1.001, 1.999, 999)))
    with pytest.raises(RateNotNegative):
        choose_p(1.2j, 1)


def test_beta_zero_moments_vanish(bump1):
    res = increment_moment_decay(bump1, 0.0, 1.5, levels=[1, 2], n_samples=10)
    assert np.all(res.moments == 0)


def test_check_decay():
    ok = MomentDecay(np.arange(3.0), np.ones(3), np.zeros(3), -0.5, 0.0, -0.4, 1.5, 0.5)
    check_decay(ok)
    bad = MomentDecay(np.arange(3.0), np.ones(3), np.zeros(3), 0.1, 0.0, -0.4, 1.5, 0.5)
    with pytest.raises(RateNotNegative):
        check_decay(bad)


def test_decay_refuses_nonnegative_rate(bump1):
    with pytest.raises(RateNotNegative):
        increment_moment_decay(bump1, 1.2j, 1.5, levels=[1], n_samples=10)
