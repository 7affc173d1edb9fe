from __future__ import annotations

import math
import warnings

import numpy as np
import pytest

from gmclab.errors import BudgetUnreachable, ClippedEigenvalueWarning, NotACoupling, NotPSD, ResidualNotPSD
from gmclab.grid import GridSpec
from gmclab.opsplit import (
    DiscretizedOperator,
    absolute_kernel,
    couple,
    discretize,
    finite_rank_truncate,
    min_eigenvalue,
    mixed_sobolev_energy,
    positive_parts,
    psd_factor,
    regular_difference_split,
    spectral_decomposition,
    split_demo_pair,
)
from gmclab.sobolev import h_s_norm
from gmclab.stats import covariance_check

SWAP = np.array([[0.0, 1.0], [1.0, 0.0]])


def random_symmetric(rng, n):
    a = rng.standard_normal((n, n))
    return a + a.T


def test_swap_matrix_parts():
    op = DiscretizedOperator(SWAP, 1.0)
    assert np.allclose(absolute_kernel(op).matrix, np.eye(2), atol=1e-14)
    plus, minus = positive_parts(op)
    assert np.allclose(plus.matrix, 0.5 * np.ones((2, 2)), atol=1e-14)
    assert np.allclose(minus.matrix, 0.5 * np.array([[1, -1], [-1, 1]]), atol=1e-14)


def test_psd_input_is_its_own_absolute_value(rng):
    a = rng.standard_normal((6, 6))
    op = DiscretizedOperator(a @ a.T, rng.uniform(0.5, 2, 6))
    assert np.allclose(absolute_kernel(op).matrix, op.matrix, atol=1e-12)
    plus, minus = positive_parts(op)
    assert np.max(np.abs(minus.matrix)) < 1e-12


def test_spectral_reconstruction_and_gram(rng):
    w = rng.uniform(0.1, 1.0, 10)
    op = DiscretizedOperator(random_symmetric(rng, 10), w)
    dec = spectral_decomposition(op)
    assert np.allclose(dec.reconstruct(), op.matrix, atol=1e-12)
    assert np.allclose(dec.gram(), np.eye(10), atol=1e-12)
    assert np.all(np.diff(np.abs(dec.eigenvalues)) <= 1e-12)
    assert op.hs_norm() == pytest.approx(math.sqrt(np.sum(dec.eigenvalues**2)))


def test_operator_validation():
    with pytest.raises(ValueError):
        DiscretizedOperator(np.array([[0.0, 1.0], [0.0, 0.0]]), 1.0)
    with pytest.raises(ValueError):
        DiscretizedOperator(np.eye(2), np.array([1.0, 0.0]))
    with pytest.raises(ValueError):
        DiscretizedOperator(np.ones((2, 3)), 1.0)


def test_discretize_zero_and_rank_one():
    grid = GridSpec(1, 16, 0.5)
    zero = discretize(lambda x, y: np.zeros(np.broadcast_shapes(x.shape, y.shape)[:-1]), grid)
    assert not np.any(zero.matrix)
    f = lambda p: np.cos(np.pi * p[..., 0])  # noqa: E731
    op = discretize(lambda x, y: f(x) * f(y), grid)
    lam = spectral_decomposition(op).eigenvalues
    fx = f(grid.points())
    assert lam[0] == pytest.approx(np.sum(fx * fx) * grid.cell_volume)
    assert np.max(np.abs(lam[1:])) < 1e-12


def test_finite_rank_truncation(rng):
    grid = GridSpec(1, 16, 0.5)
    op = DiscretizedOperator(random_symmetric(rng, 16), grid.cell_volume, grid)
    full = finite_rank_truncate(op, rank=16)
    assert full.remainder_norm < 1e-12
    lam = spectral_decomposition(op).eigenvalues
    tr = finite_rank_truncate(op, rank=8)
    assert tr.remainder_norm == pytest.approx(math.sqrt(np.sum(lam[8:] ** 2)), rel=1e-10)
    with pytest.raises(BudgetUnreachable):
        finite_rank_truncate(op, budget=1e-300)
    with pytest.raises(ValueError):
        finite_rank_truncate(op)


def test_finite_rank_budget_finds_rank_one():
    grid = GridSpec(1, 12, 0.5)
    v = np.sin(np.arange(12.0))
    op = DiscretizedOperator(np.outer(v, v), grid.cell_volume, grid)
    tr = finite_rank_truncate(op, budget=1e-10)
    assert tr.rank == 1
    assert np.allclose(tr.operator.matrix, op.matrix, atol=1e-12)


def test_mixed_energy_at_zero_order(rng):
    grid = GridSpec(1, 8, 0.5)
    op = DiscretizedOperator(random_symmetric(rng, 8), grid.cell_volume, grid)
    norm = h_s_norm(op.as_grid_function(), 0.0)
    assert mixed_sobolev_energy(op, 0.0) == pytest.approx(3 * norm**2, rel=1e-12)


def test_split_of_equal_operators_is_zero(rng):
    grid = GridSpec(1, 10, 0.5)
    a = rng.standard_normal((10, 10))
    c = DiscretizedOperator(a @ a.T, grid.cell_volume, grid)
    sp = regular_difference_split(c, c, 1.0)
    assert not np.any(sp.plus.matrix) and not np.any(sp.minus.matrix)


def test_demo_split_identity():
    c1, c2, psi0, _ = split_demo_pair(64)
    sp = regular_difference_split(c1, c2, psi0)
    assert np.max(np.abs(sp.plus.matrix - sp.minus.matrix - sp.target)) < 1e-10
    assert min(sp.min_eigenvalues) >= -1e-8
    # observed H^s stability: both parts stay within a small multiple of the target
    target = h_s_norm(c1.like(sp.target).as_grid_function(), sp.s)
    assert max(sp.sobolev_norms) <= 2.0 * target


def test_couple_equal_covariances(rng):
    a = rng.standard_normal((4, 4))
    c = a @ a.T
    z = np.zeros((4, 4))
    cp = couple(c, c, z, z, seed=3)
    assert max(cp.contract_errors().values()) < 1e-10
    assert np.max(np.abs(cp.covariance("G"))) < 1e-10


def test_couple_two_point_example():
    c1 = np.array([[2.0, 1.0], [1.0, 2.0]])
    c2 = np.eye(2)
    cp = couple(c1, c2, c1 - c2, np.zeros((2, 2)), seed=5)
    errs = cp.contract_errors()
    assert max(errs.values()) < 1e-12
    draw = cp.sample(10**6)
    samples = np.hstack([draw["X1"], draw["X2"], draw["G"]])
    rep = covariance_check(samples, cp.joint_covariance())
    assert rep.ok, rep


def test_couple_rejects_non_coupling():
    with pytest.raises(NotACoupling):
        couple(np.eye(2), np.eye(2), np.eye(2), np.zeros((2, 2)), seed=0)


def test_couple_residual_policy():
    args = (2 * np.eye(2), 3 * np.eye(2), -np.eye(2), np.zeros((2, 2)))
    with pytest.raises(ResidualNotPSD):
        couple(*args, seed=0)
    with pytest.warns(ClippedEigenvalueWarning):
        cp = couple(*args, seed=0, clip=True)
    assert np.allclose(cp.covariance("X1"), args[0])


def test_psd_factor_policy():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        f = psd_factor(np.diag([1.0, -1e-13]))
    assert np.allclose(f @ f.T, np.diag([1.0, 0.0]))
    with pytest.warns(ClippedEigenvalueWarning):
        psd_factor(np.diag([1.0, -1e-10]))
    with pytest.raises(NotPSD):
        psd_factor(np.diag([1.0, -1e-6]))
    assert not np.any(psd_factor(np.zeros((3, 3))))


def test_min_eigenvalue():
    assert min_eigenvalue(SWAP) == pytest.approx(-1.0)
