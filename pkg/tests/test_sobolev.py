from __future__ import annotations

import math
import warnings

import numpy as np
import pytest

from gmclab.errors import PreconditionViolationWarning, UnderResolved, WindowNotInterior
from gmclab.grid import GridSpec
from gmclab.kernels import bump_seed
from gmclab.sobolev import (
    PeriodicGridFunction,
    bilinear_bound_check,
    fourier_lower_bound_check,
    h_s_norm,
    holder_seminorm,
    local_h_s_norm,
    log_kernel_growth,
    rescale_decay_curve,
    smooth_window,
)

# largest C^0.3 / H^0.8 ratio seen over 100 random band-limited functions, rounded up
EMBEDDING_CONSTANT = 4.0


def random_trig(rng, n, K=6, dim=1):
    x = np.arange(n) / n
    f = np.zeros((n,) * dim)
    for _ in range(2 * K):
        m = rng.integers(-K, K + 1, dim)
        c = rng.standard_normal() + 1j * rng.standard_normal()
        mesh = np.meshgrid(*([x] * dim), indexing="ij")
        phase = sum(mi * a for mi, a in zip(m, mesh))
        f = f + np.real(c * np.exp(2j * np.pi * phase))
    return f


def test_zero_function_has_zero_norm():
    assert h_s_norm(PeriodicGridFunction(np.zeros(32), 0.1), 1.5) == 0.0


@pytest.mark.parametrize("dim,m", [(1, (3,)), (2, (1, -2))])
@pytest.mark.parametrize("s", [-0.5, 0.0, 1.3])
def test_single_mode(dim, m, s):
    n, ell = 16, 2.0
    x = np.arange(n) * ell / n
    mesh = np.meshgrid(*([x] * dim), indexing="ij")
    f = np.exp(2j * np.pi * sum(mi * a for mi, a in zip(m, mesh)) / ell)
    expected = (1 + sum(mi * mi for mi in m) / ell**2) ** (s / 2) * ell ** (dim / 2)
    assert h_s_norm(PeriodicGridFunction(f, ell / n), s) == pytest.approx(expected, rel=1e-12)


def test_gaussian_against_direct_dft():
    n = 256
    h = 1.0 / n
    x = -0.5 + h * np.arange(n)
    f = np.exp(-50 * x * x)
    xi = np.fft.fftfreq(n, h)
    # direct O(n^2) sum, independent of the FFT
    hat = h * np.exp(-2j * np.pi * np.outer(xi, x)) @ f
    s = 1.2
    oracle = math.sqrt(np.sum((1 + xi * xi) ** s * np.abs(hat) ** 2))
    assert h_s_norm(PeriodicGridFunction(f, h), s) == pytest.approx(oracle, rel=1e-10)


def test_parseval(rng):
    for _ in range(50):
        dim = int(rng.integers(1, 3))
        n = 16
        h = rng.uniform(0.05, 0.5)
        f = rng.standard_normal((n,) * dim)
        assert h_s_norm(PeriodicGridFunction(f, h), 0.0) == pytest.approx(math.sqrt(np.sum(f * f) * h**dim), rel=1e-12)


def test_monotone_in_s(rng):
    f = PeriodicGridFunction(rng.standard_normal(64), 0.05)
    vals = [h_s_norm(f, s) for s in (-1.0, -0.3, 0.0, 0.5, 1.0, 2.0)]
    assert all(a <= b for a, b in zip(vals, vals[1:]))


def test_interpolation_inequality(rng):
    for _ in range(100):
        f = PeriodicGridFunction(rng.standard_normal((16, 16)), rng.uniform(0.02, 0.3))
        s0, s1 = np.sort(rng.uniform(-1, 2, 2))
        th = rng.uniform()
        lhs = h_s_norm(f, (1 - th) * s0 + th * s1)
        assert lhs <= h_s_norm(f, s0) ** (1 - th) * h_s_norm(f, s1) ** th * (1 + 1e-12)


def test_holder_sobolev_ratio_is_bounded(rng):
    ratios = []
    for n in (64, 128, 256):
        for _ in range(30):
            f = random_trig(rng, n)
            ratios.append(holder_seminorm(f, 1 / n, 0.3) / h_s_norm(PeriodicGridFunction(f, 1 / n), 0.8))
    assert max(ratios) <= EMBEDDING_CONSTANT


def test_holder_of_constant_is_zero():
    assert holder_seminorm(np.full((8, 8), 3.0), 0.1, 0.5) == 0.0


def test_local_norm_with_unit_function():
    pts = np.linspace(-1, 1, 33)[:, None]
    psi = smooth_window(pts[:, 0] / 0.9)
    h = pts[1, 0] - pts[0, 0]
    padded = np.zeros(66)
    padded[:33] = psi
    assert local_h_s_norm(np.ones(33), psi, 1.0, h) == pytest.approx(h_s_norm(PeriodicGridFunction(padded, h), 1.0))
    assert local_h_s_norm(np.zeros(33), psi, 1.0, h) == 0.0


def test_local_norm_rejects_boundary_window():
    with pytest.raises(WindowNotInterior):
        local_h_s_norm(np.ones(8), np.ones(8), 1.0, 0.1)
    with pytest.raises(ValueError):
        local_h_s_norm(np.ones(8), np.zeros(9), 1.0, 0.1)


def test_log_kernel_norm_grows():
    g = log_kernel_growth(1, None, (16, 32, 64))
    assert np.all(np.diff(g.values) > 0)
    assert g.slope > 0


def test_bilinear_bound(rng):
    n, h = 8, 0.125
    zero = PeriodicGridFunction(np.zeros((n, n)), h)
    phi = PeriodicGridFunction(rng.standard_normal(n), h)
    rep = bilinear_bound_check(zero, phi, 1.1)
    assert rep.lhs == 0.0 and rep.holds
    a = rng.standard_normal(n)
    rep = bilinear_bound_check(PeriodicGridFunction(np.outer(a, a), h), phi, 1.1)
    assert rep.holds
    for _ in range(100):
        s = rng.uniform(0.2, 2.0)
        hh = PeriodicGridFunction(rng.standard_normal((n, n)), h)
        assert bilinear_bound_check(hh, PeriodicGridFunction(rng.standard_normal(n), h), s).holds
    with pytest.raises(ValueError):
        bilinear_bound_check(zero, phi, 0.0)


def test_fourier_lower_bound_bump():
    k = bump_seed(1)
    cs = []
    for n in (128, 256, 512):
        rep = fourier_lower_bound_check(k, 0.5, GridSpec(1, n, 1.0))
        assert rep.c > 0
        assert rep.mean > 0
        cs.append(rep.c)
    # refinement adds frequencies, so c can only shrink, and slowly
    assert all(b <= a * 1.05 for a, b in zip(cs, cs[1:]))
    with pytest.raises(ValueError):
        fourier_lower_bound_check(k, 0.5, GridSpec(1, 64, 0.5))


def _window(p):
    return smooth_window(p, 1.0)


def test_rescale_decay_zero_function():
    out = rescale_decay_curve(lambda p: np.zeros(p.shape[:-1]), _window, 0.3, [0.8, 0.4, 0.2, 0.1])
    assert np.all(out == 0)


def test_rescale_decay_linear_function():
    out = rescale_decay_curve(lambda p: np.sum(p, axis=-1), _window, 0.3, [0.8, 0.4, 0.2, 0.1])
    assert np.all(np.diff(out) < 0)
    assert out[-1] <= 0.2 * out[0]


def test_rescale_decay_warns_when_F0_nonzero():
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        out = rescale_decay_curve(lambda p: 1 + np.sum(p, axis=-1), _window, 0.3, [0.8, 0.4, 0.2, 0.1])
    assert any(issubclass(x.category, PreconditionViolationWarning) for x in w)
    assert out[-1] > 0.2 * out[0]


def test_rescale_decay_resolution_and_range():
    with pytest.raises(UnderResolved):
        rescale_decay_curve(lambda p: np.sum(p, -1), _window, 0.3, [0.05])
    with pytest.raises(ValueError):
        rescale_decay_curve(lambda p: np.sum(p, -1), _window, 0.6, [0.5])
