"""Discrete Sobolev norms on tori and the functional inequalities built on them.

Transform convention: ``f-hat(xi) = h^dim sum_x f(x) exp(-2 pi i xi . x)`` with
``xi`` on the lattice ``Z^dim / l`` (``l = n h`` the torus side), so
``||f||_{H^s}^2 = l^{-dim} sum_xi (1 + |xi|^2)^s |f-hat(xi)|^2``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NonPositiveTransform, PreconditionViolationWarning, UnderResolved, WindowNotInterior
from .grid import GridSpec
from .kernels import SeedCovariance, layer_integral


@dataclass(frozen=True)
class PeriodicGridFunction:
    """Samples of a function on a torus of side ``n * spacing`` in every direction."""

    values: np.ndarray
    spacing: float

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim == 0 or len(set(v.shape)) != 1:
            raise ValueError("values must be an n^dim array")
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.ndim

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def side(self) -> float:
        return self.n * self.spacing

    def frequencies(self) -> list[np.ndarray]:
        return [np.fft.fftfreq(self.n, self.spacing)] * self.dim

    def fourier(self) -> np.ndarray:
        return np.fft.fftn(self.values) * self.spacing**self.dim

    def freq_sq(self) -> np.ndarray:
        axes = np.meshgrid(*self.frequencies(), indexing="ij")
        return sum(a * a for a in axes)


def sobolev_weight(f: PeriodicGridFunction, s: float) -> np.ndarray:
    return (1.0 + f.freq_sq()) ** s


def h_s_norm(f: PeriodicGridFunction, s: float) -> float:
    """Discrete ``H^s`` norm (Parseval-exact for ``s = 0``)."""
    coef = f.fourier()
    total = np.sum(sobolev_weight(f, s) * np.abs(coef) ** 2) / f.side**f.dim
    return float(math.sqrt(total))


def _check_interior(psi: np.ndarray) -> None:
    for ax in range(psi.ndim):
        lo = np.take(psi, 0, axis=ax)
        hi = np.take(psi, -1, axis=ax)
        if np.any(lo != 0) or np.any(hi != 0):
            raise WindowNotInterior("window does not vanish on the boundary of the cube")


def local_h_s_norm(F: np.ndarray, psi: np.ndarray, s: float, spacing: float) -> float:
    """``||psi F||_{H^s}`` after zero extension to a torus twice the cube's side."""
    F = np.asarray(F)
    psi = np.asarray(psi)
    if F.shape != psi.shape:
        raise ValueError("F and window must share a grid")
    _check_interior(psi)
    prod = psi * F
    padded = np.zeros(tuple(2 * m for m in prod.shape), dtype=prod.dtype)
    padded[tuple(slice(0, m) for m in prod.shape)] = prod
    return h_s_norm(PeriodicGridFunction(padded, spacing), s)


def smooth_window(x: np.ndarray, radius: float = 1.0) -> np.ndarray:
    """C^inf bump of the Euclidean norm, equal to 1 at 0 and vanishing for |x| >= radius."""
    x = np.asarray(x, float)
    r2 = np.sum(x * x, axis=-1) / radius**2 if x.ndim > 1 else (x / radius) ** 2
    out = np.zeros(np.shape(r2))
    m = r2 < 1
    out[m] = np.exp(1.0 - 1.0 / (1.0 - r2[m]))
    return out


def _cube_points(n: int, dim: int, half: float, node_centered: bool = False) -> tuple[np.ndarray, float]:
    h = 2 * half / n
    ax = -half + h * np.arange(n) if node_centered else -half + h * (np.arange(n) + 0.5)
    mesh = np.meshgrid(*([ax] * dim), indexing="ij")
    return np.stack(mesh, axis=-1), h


@dataclass
class GrowthCurve:
    n: np.ndarray
    values: np.ndarray
    slope: float


def log_kernel_growth(d: int = 1, s: float | None = None, n_list=(16, 32, 64, 128), window_radius: float = 0.8) -> GrowthCurve:
    """``||psi log(1/|x-y|)||_{H^s}`` on ``[-1,1]^{2d}`` under refinement; diagonal capped at ``log(2/h)``."""
    s = d + 0.1 if s is None else s
    vals = []
    for n in n_list:
        pts, h = _cube_points(n, 2 * d, 1.0)
        x, y = pts[..., :d], pts[..., d:]
        r = np.linalg.norm(x - y, axis=-1)
        with np.errstate(divide="ignore"):
            F = np.where(r > 0, -np.log(np.where(r > 0, r, 1.0)), math.log(2.0 / h))
        vals.append(local_h_s_norm(F, smooth_window(pts, window_radius), s, h))
    vals = np.array(vals)
    slope = float(np.polyfit(np.log(n_list), np.log(vals), 1)[0])
    return GrowthCurve(np.asarray(n_list), vals, slope)


@dataclass
class BilinearReport:
    lhs: float
    rhs: float
    holds: bool


def bilinear_bound_check(h: PeriodicGridFunction, phi: PeriodicGridFunction, s: float) -> BilinearReport:
    """``|<h, phi (x) phi>| <= ||h||_{H^s} ||phi||_{H^{-s/2}}^2``."""
    if s <= 0:
        raise ValueError("need s > 0")
    d = phi.dim
    if h.dim != 2 * d or h.n != phi.n or not np.isclose(h.spacing, phi.spacing):
        raise ValueError("h must live on the doubled torus of phi")
    v = np.tensordot(h.values, phi.values, axes=(list(range(d, 2 * d)), list(range(d))))
    lhs = abs(np.sum(v * phi.values)) * phi.spacing ** (2 * d)
    rhs = h_s_norm(h, s) * h_s_norm(phi, -s / 2) ** 2
    return BilinearReport(float(lhs), float(rhs), bool(lhs <= rhs * (1 + 1e-8)))


@dataclass
class FourierLowerBound:
    c: float
    frequencies: np.ndarray
    transform: np.ndarray
    mean: float


def _torus_radii(grid: GridSpec) -> np.ndarray:
    """Minimum-image distance from the origin node on the torus of side ``2 radius``."""
    n, h = grid.n, grid.spacing
    j = np.arange(n)
    off = np.minimum(j, n - j) * h
    mesh = np.meshgrid(*([off] * grid.d), indexing="ij")
    return np.sqrt(sum(m * m for m in mesh))


def fourier_lower_bound_check(k: SeedCovariance, delta: float, grid: GridSpec) -> FourierLowerBound:
    """Largest ``c`` with ``H-hat(xi) >= c (1 + |xi|)^{-d-delta}`` on the resolved frequencies.

    ``H(x) = int_0^inf k(e^u x) e^{-delta u} du`` is sampled on the torus of
    side ``2 * grid.radius``; the support of ``H`` must fit in half of it.
    """
    if math.isfinite(k.support_radius) and k.support_radius > grid.radius:
        raise ValueError("torus too small for the support of H")
    radii = _torus_radii(grid)
    H = layer_integral(k, radii, 0.0, math.inf, "S", delta)
    f = PeriodicGridFunction(H, grid.spacing)
    hat = f.fourier().real
    if np.min(hat) < -1e-10:
        raise NonPositiveTransform(f"transform reaches {np.min(hat):.3g}")
    xi = np.sqrt(f.freq_sq())
    ratio = hat * (1.0 + xi) ** (grid.d + delta)
    return FourierLowerBound(float(np.min(ratio)), xi, hat, float(hat.flat[0]))


def rescale_decay_curve(
    F: Callable[[np.ndarray], np.ndarray],
    psi: Callable[[np.ndarray], np.ndarray],
    delta: float,
    eps_list,
    d: int = 1,
    n: int = 256,
) -> np.ndarray:
    """``||psi(./eps) F||_{H^{d+delta}(R^{2d})}`` for each ``eps``.

    ``F`` and ``psi`` are callables on points ``(..., 2d)``; ``psi`` is
    supported in the unit ball.  Sampling is on the node-centred torus
    ``[-1, 1)^{2d}`` with ``n`` nodes per side (0 is a node).
    """
    if not 0 < delta < 0.5:
        raise ValueError("delta must lie in (0, 1/2)")
    eps = np.asarray(eps_list, dtype=float)
    pts, h = _cube_points(n, 2 * d, 1.0, node_centered=True)
    if 2 * eps.min() / h < 16:
        raise UnderResolved(f"window of width {2 * eps.min():.3g} covers fewer than 16 nodes")
    if eps.max() >= 1.0:
        raise ValueError("eps must be < 1 so the window stays inside the torus")
    Fv = np.asarray(F(pts), dtype=float)
    if abs(float(F(np.zeros((1, 2 * d)))[0])) > 1e-12:
        warnings.warn("F(0) != 0: the rescaled norms need not vanish", PreconditionViolationWarning, stacklevel=2)
    out = []
    for e in eps:
        g = PeriodicGridFunction(psi(pts / e) * Fv, h)
        out.append(h_s_norm(g, d + delta))
    return np.array(out)


def holder_seminorm(values: np.ndarray, spacing: float, alpha: float) -> float:
    """Discrete ``C^alpha`` seminorm over axis-aligned dyadic separations (periodic)."""
    v = np.asarray(values)
    n = v.shape[0]
    best = 0.0
    step = 1
    while step <= n // 2:
        for ax in range(v.ndim):
            diff = np.abs(np.roll(v, -step, axis=ax) - v)
            best = max(best, float(diff.max()) / (step * spacing) ** alpha)
        step *= 2
    return best


def norm_record(op: str, s: float, n: int, value: float, oracle_value: float | None = None) -> dict:
    rec = {"op": op, "s": s, "n": n, "value": value}
    if oracle_value is not None:
        rec["oracle_value"] = oracle_value
    return rec
