from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import integrate

from gmclab.errors import DivergentIntegral
from gmclab.grid import GridSpec
from gmclab.kernels import (
    KernelSpec,
    LayerTable,
    LogKernel,
    anisotropy_limit,
    bump_seed,
    comparison_F,
    dilation_factor,
    file_seed,
    kernel_matrix,
    layer_covariance_L,
    layer_covariance_S,
    layer_integral,
    points_kernel_matrix,
    poisson_seed,
    seed_invariants,
    star_kernel,
    star_remainder,
    star_remainder_at_origin,
    triangle_seed,
)

# composite Simpson on u in [0, 40] with 10^6 panels, k0 in d = 1 at x = 0.1
SIMPSON_K0_AT_0_1 = 2.3075602584206294


def simpson(f, a, b, n):
    u = np.linspace(a, b, n + 1)
    y = f(u)
    h = (b - a) / n
    return h / 3 * (y[0] + y[-1] + 4 * y[1:-1:2].sum() + 2 * y[2:-1:2].sum())


# ---------------------------------------------------------------------------
# seeds
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("make,d", [(bump_seed, 1), (bump_seed, 2), (poisson_seed, 1), (poisson_seed, 2), (triangle_seed, 1)])
def test_seed_invariants(make, d):
    k = make(d)
    rep = seed_invariants(k, GridSpec(d, 12 if d == 1 else 6, 1.0))
    assert rep["k0"] == 1.0
    assert rep["decay_ok"]
    assert rep["psd_ok"]
    if math.isfinite(k.support_radius):
        assert rep["support_ok"]


def test_triangle_is_one_dimensional():
    with pytest.raises(ValueError):
        triangle_seed(2)


def test_bump_root_convolves_to_seed(bump1):
    y = np.linspace(-0.5, 0.5, 4001)
    q = bump1.root_profile
    for x in (0.0, 0.2, 0.55, 0.9):
        conv = integrate.trapezoid(q(np.abs(y)) * q(np.abs(x - y)), y)
        assert conv == pytest.approx(bump1(x), abs=1e-9)


def test_poisson_fourier_transform(poisson1):
    # int (1 + x^2)^-1 cos(2 pi z x) dx = pi e^{-2 pi |z|}
    for z in (0.0, 0.1, 0.5):
        val = 2 * integrate.quad(lambda x: poisson1(x), 0, np.inf, weight="cos", wvar=2 * math.pi * z)[0] if z else \
            2 * integrate.quad(lambda x: poisson1(x), 0, np.inf)[0]
        assert val == pytest.approx(poisson1.fourier_profile(z), rel=1e-9)
        assert poisson1.fourier_profile(z) == pytest.approx(math.pi * math.exp(-2 * math.pi * z))


def test_bump_fourier_is_nonnegative(bump1, bump2):
    z = np.linspace(0, 20, 400)
    assert np.all(bump1.fourier_profile(z) >= 0)
    assert np.all(bump2.fourier_profile(z) >= 0)


def test_dilation_scales_support_and_profile(bump1):
    k2 = bump1.dilate(2.0)
    assert k2.support_radius == 0.5
    assert k2(0.2) == pytest.approx(bump1(0.4))
    assert bump1.dilate(1.0) is bump1


def test_file_seed_round_trip(tmp_path):
    r = np.linspace(0, 1, 201)
    path = tmp_path / "tri.csv"
    np.savetxt(path, np.column_stack([r, 1 - r]), delimiter=",", header="r,k")
    k = file_seed(path, 1, 1.0, support_radius=1.0)
    x = np.array([0.0, 0.13, 0.5, 0.99, 1.5])
    assert np.allclose(k(x), np.maximum(0, 1 - x), atol=1e-12)


def test_file_seed_requires_unit_origin(tmp_path):
    path = tmp_path / "bad.csv"
    np.savetxt(path, np.array([[0.0, 2.0], [1.0, 0.0]]), delimiter=",")
    with pytest.raises(ValueError):
        file_seed(path, 1, 1.0)


# ---------------------------------------------------------------------------
# star kernel
# ---------------------------------------------------------------------------


def test_star_kernel_vanishes_outside_support(bump1, bump2):
    assert star_kernel(bump1, 1.0) == 0.0
    assert star_kernel(bump1, 3.7) == 0.0
    assert star_kernel(bump2, np.array([0.8, 0.9])) == 0.0


def test_star_kernel_diverges_at_origin(bump1):
    with pytest.raises(DivergentIntegral):
        star_kernel(bump1, 0.0)
    assert star_kernel(bump1, 0.0, 3.0) == pytest.approx(3.0)


def test_star_kernel_simpson_oracle(poisson1):
    # the oracle is recomputed here and compared with its frozen value
    oracle = simpson(lambda u: poisson1(0.1 * np.exp(u)), 0.0, 40.0, 10**6)
    assert oracle == pytest.approx(SIMPSON_K0_AT_0_1, abs=1e-13)
    assert star_kernel(poisson1, 0.1) == pytest.approx(SIMPSON_K0_AT_0_1, abs=1e-7)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_closed_form_cross_validation(d):
    k = poisson_seed(d)
    for r in (1e-3, 0.05, 0.7, 4.0):
        for t in (1.0, 5.0, math.inf):
            tail = 0.0 if math.isinf(t) else comparison_F(r * math.exp(t), d)
            x = np.zeros(d)
            x[0] = r
            assert star_kernel(k, x, t) == pytest.approx(comparison_F(r, d) - tail, abs=1e-8)


def test_comparison_F_against_quadrature():
    for d in (1, 2):
        for y in (1e-3, 0.3, 2.0):
            # u = e^v removes the 1/u singularity
            ref = integrate.quad(lambda v: (1 + math.exp(2 * v)) ** (-(d + 1) / 2), math.log(y), 40, epsabs=1e-14, limit=200)[0]
            assert comparison_F(y, d) == pytest.approx(ref, abs=1e-11)


def test_vectorised_and_adaptive_quadrature_agree(bump1, poisson1, bump2, rng):
    for k in (bump1, poisson1, bump2):
        r = 10 ** rng.uniform(-4, 0.5, 20)
        for kind, t1 in (("Y", 7.0), ("L", 3.0), ("S", math.inf)):
            vec = layer_integral(k, r, 0.0, t1, kind, 0.5)
            for ri, v in zip(r, vec):
                x = np.zeros(k.dimension)
                x[0] = ri
                ref = {"Y": lambda: star_kernel(k, x, t1),
                       "L": lambda: layer_covariance_L(k, 0.5, x, np.zeros_like(x), t1, t1),
                       "S": lambda: layer_covariance_S(k, 0.5, x, np.zeros_like(x))}[kind]()
                assert v == pytest.approx(ref, abs=1e-9)


def test_layer_table_matches_quadrature(bump1, bump2, rng):
    for k in (bump1, bump2):
        tab = LayerTable(k, 0.5)
        r = 10 ** rng.uniform(-6, 0, 200)
        t = rng.uniform(0.1, 15, 200)
        for kind in ("Y", "L", "S"):
            ref = np.array([layer_integral(k, ri, 0.0, ti, kind, 0.5) for ri, ti in zip(r, t)])
            assert np.max(np.abs(tab(r, kind, t) - ref)) < 1e-11
        for kind in ("L", "S"):
            assert np.max(np.abs(tab(r, kind) - layer_integral(k, r, 0.0, np.inf, kind, 0.5))) < 1e-11


def test_layer_table_origin(bump1):
    tab = LayerTable(bump1, 0.5)
    assert tab(np.array([0.0]), "S")[0] == pytest.approx(2.0)
    assert tab(np.array([0.0]), "L", 3.0)[0] == pytest.approx(3.0 - (1 - math.exp(-1.5)) / 0.5)
    with pytest.raises(DivergentIntegral):
        tab(np.array([0.0]), "L")


# ---------------------------------------------------------------------------
# remainders, dilation, anisotropy
# ---------------------------------------------------------------------------


def test_poisson_remainder_at_origin_is_zero(poisson1):
    # int_0^1 -s/(1+s^2) ds + int_1^inf ds/(s(1+s^2)) = -log2/2 + log2/2
    assert star_remainder_at_origin(poisson1) == pytest.approx(0.0, abs=1e-12)


def test_remainder_is_continuous_at_origin(bump1):
    g0 = star_remainder_at_origin(bump1)
    assert star_remainder(bump1, np.array([1e-7]))[0] == pytest.approx(g0, abs=1e-6)
    assert star_remainder(bump1, np.array([0.0]))[0] == g0


def test_dilation_factor_examples(bump1):
    g0 = star_remainder_at_origin(bump1)
    res = dilation_factor(g0, g0)
    assert (res.lam0, res.a) == (1.0, 0.0)
    res = dilation_factor(g0 + 1.0, g0)
    assert res.lam0 == 1.0 and res.a == pytest.approx(1.0)
    res = dilation_factor(g0 - 1.0, g0)
    assert res.lam0 == pytest.approx(math.e) and res.a_shifted == pytest.approx(0.0, abs=1e-12)


def test_dilation_lowers_remainder_by_log(bump1):
    g0 = star_remainder_at_origin(bump1)
    assert star_remainder_at_origin(bump1.dilate(3.0)) == pytest.approx(g0 - math.log(3.0), abs=1e-10)


def test_anisotropy_triangle_closed_form():
    # int_0^{log 2} (1 - e^u r) du = log 2 - r for e^u r < 1
    tri = lambda s: np.maximum(0.0, 1.0 - np.abs(s))  # noqa: E731
    rep = anisotropy_limit(tri, [1e-2, 1e-3, 1e-4])
    assert np.allclose(rep.values, math.log(2) - rep.radii, atol=1e-13)
    assert rep.limit == pytest.approx(math.log(2), abs=1e-3)
    oracle = simpson(lambda u: tri(np.exp(u) * 1e-3), 0.0, math.log(2), 10**5)
    assert rep.values[1] == pytest.approx(oracle, abs=1e-9)


# ---------------------------------------------------------------------------
# log kernels, matrices and specs
# ---------------------------------------------------------------------------


def test_log_kernel_symmetry_and_diagnostic():
    lk = LogKernel(lambda x, y: np.cos(np.sum(x, -1) + np.sum(y, -1)), 1, 0.5)
    assert lk.symmetry_error() < 1e-12
    grid = GridSpec(1, 16, 0.5)
    m = lk.grid_matrix(grid)
    assert np.allclose(m, m.T)
    assert np.isfinite(lk.min_eigenvalue(grid))


def test_kernel_matrix_matches_points_version(bump2):
    grid = GridSpec(2, 5, 0.5)
    a = kernel_matrix(bump2, grid, "L", 0.5, 0.0, 3.0)
    b = points_kernel_matrix(bump2, grid.points(), "L", 0.5, 0.0, 3.0)
    assert np.max(np.abs(a - b)) < 1e-14


def test_kernel_spec_round_trip():
    spec = KernelSpec("poisson", 0.3, 2, decay_exponent=3.0, dilation=1.5)
    assert KernelSpec.from_dict(spec.to_dict()) == spec
    assert spec.build().support_radius == math.inf
    with pytest.raises(ValueError):
        KernelSpec.from_dict({"delta": 1.0})
    with pytest.raises(ValueError):
        KernelSpec.from_dict({"dilation": 0.5})
