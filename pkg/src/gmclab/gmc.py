"""Chaos measures built from field samples, and their finite-level diagnostics.

Cell masses are kept as ``log|m| + i * phase`` so that large ``Re beta`` or
deep levels never overflow; pairings shift by the per-realization maximum.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np

from .errors import EpsilonUnderResolved, RateNotNegative
from .grid import GridSpec
from .kernels import SeedCovariance
from .rng import block_ranges, parallel_map
from .sampler import PeriodicLayers

Mode = Literal["subcritical", "seneta_heyde", "derivative"]


def critical_beta(d: int) -> float:
    return math.sqrt(2 * d)


# ---------------------------------------------------------------------------
# mollification
# ---------------------------------------------------------------------------


def default_mollifier(x: np.ndarray) -> np.ndarray:
    """Radial C^inf bump supported in the unit ball (unnormalised)."""
    r2 = np.sum(np.asarray(x, float) ** 2, axis=-1)
    out = np.zeros(r2.shape)
    m = r2 < 1
    out[m] = np.exp(-1.0 / (1.0 - r2[m]))
    return out


def mollifier_matrix(grid: GridSpec, eps: float, psi: Callable[[np.ndarray], np.ndarray] | None = None) -> np.ndarray:
    """Rows ``psi_eps(x_i - x_j) h^d`` renormalised to unit discrete mass."""
    if eps < 2 * grid.spacing:
        raise EpsilonUnderResolved(f"eps = {eps:.3g} is below two grid spacings ({2 * grid.spacing:.3g})")
    psi = default_mollifier if psi is None else psi
    p = grid.points()
    w = psi((p[:, None, :] - p[None, :, :]) / eps)
    return w / w.sum(axis=1, keepdims=True)


def mollify(X: np.ndarray, grid: GridSpec, eps: float, cov: np.ndarray, psi=None) -> tuple[np.ndarray, np.ndarray]:
    """``(X_eps, E X_eps^2)``; the variance profile is the exact quadratic form ``M C M^T``."""
    m = mollifier_matrix(grid, eps, psi)
    x_eps = np.asarray(X, float) @ m.T
    var = np.einsum("ij,jk,ik->i", m, np.asarray(cov, float), m)
    return x_eps, var


# ---------------------------------------------------------------------------
# chaos measures
# ---------------------------------------------------------------------------


@dataclass
class ChaosMeasure:
    """Per-cell masses ``exp(log_abs + i phase)`` for each realization (rows)."""

    log_abs: np.ndarray
    phase: np.ndarray | None
    beta: complex
    level: float
    mode: str
    cell_volume: float
    grid: GridSpec | None = None
    meta: dict = field(default_factory=dict)

    @property
    def signed(self) -> bool:
        return self.mode == "derivative"

    @property
    def is_complex(self) -> bool:
        return self.phase is not None and np.iscomplexobj(self.beta) and complex(self.beta).imag != 0.0

    def masses(self) -> np.ndarray:
        if self.phase is None:
            return np.exp(self.log_abs)
        out = np.exp(self.log_abs + 1j * self.phase)
        return out if self.is_complex else out.real

    def total(self) -> np.ndarray:
        return pair_with_test_function(self, 1.0)


def chaos_cells(X: np.ndarray, var, beta: complex = 0.0, mode: Mode = "subcritical", cell_volume: float = 1.0, level: float | None = None, d: int = 1, grid: GridSpec | None = None) -> ChaosMeasure:
    """Normalised exponential ``h^d * prefactor * exp(beta X - beta^2 var / 2)``.

    ``seneta_heyde`` multiplies by ``sqrt(level)`` (``level = log 1/eps``);
    ``derivative`` by ``sqrt(2d) var - X``.  Both force ``beta = sqrt(2d)``.
    """
    X = np.asarray(X, float)
    var = np.broadcast_to(np.asarray(var, float), X.shape[-1:])
    if grid is not None:
        d, cell_volume = grid.d, grid.cell_volume
    if mode in ("seneta_heyde", "derivative"):
        bc = critical_beta(d)
        if beta not in (0.0, None) and not np.isclose(complex(beta), bc):
            raise ValueError(f"{mode} mode requires beta = sqrt(2d) = {bc:.6g}")
        beta = bc
        if level is None:
            raise ValueError(f"{mode} mode needs the level log(1/eps)")
    beta = complex(beta)
    b2 = beta * beta
    log_abs = beta.real * X - 0.5 * b2.real * var + math.log(cell_volume)
    phase = beta.imag * X - 0.5 * b2.imag * var if beta.imag != 0.0 else np.zeros_like(X)
    if mode == "seneta_heyde":
        log_abs = log_abs + 0.5 * math.log(level)
    elif mode == "derivative":
        pref = beta.real * var - X
        with np.errstate(divide="ignore"):
            log_abs = log_abs + np.log(np.abs(pref))
        phase = phase + np.where(pref < 0, math.pi, 0.0)
    elif mode != "subcritical":
        raise ValueError(f"unknown mode {mode!r}")
    return ChaosMeasure(log_abs, phase, beta if beta.imag else beta.real, level if level is not None else math.nan, mode, cell_volume, grid)


def pair_with_test_function(mu: ChaosMeasure, phi) -> np.ndarray:
    """``sum_cells phi * mass`` per realization (shift-stabilised)."""
    la = mu.log_abs
    phi = np.broadcast_to(np.asarray(phi), la.shape[-1:])
    shift = np.max(la, axis=-1, keepdims=True)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    w = np.exp(la - shift)
    if mu.phase is not None and np.any(mu.phase):
        w = w * np.exp(1j * mu.phase)
    s = np.sum(w * phi, axis=-1) * np.exp(shift[..., 0])
    if np.iscomplexobj(s) and not mu.is_complex and not np.iscomplexobj(phi):
        s = s.real
    return s


# ---------------------------------------------------------------------------
# moment oracles
# ---------------------------------------------------------------------------


def second_moment_oracle(C: np.ndarray, beta: complex, phi, cell_volume: float = 1.0) -> float:
    """``E |mu_beta(phi)|^2 = sum_ij phi_i conj(phi_j) h^{2d} exp(|beta|^2 C_ij)`` (log-sum-exp)."""
    C = np.asarray(C, float)
    phi = np.broadcast_to(np.asarray(phi), C.shape[:1])
    e = abs(complex(beta)) ** 2 * C
    m = float(e.max())
    val = np.real(np.conj(phi) @ np.exp(e - m) @ phi) if np.iscomplexobj(phi) else float(phi @ np.exp(e - m) @ phi)
    return float(val) * math.exp(m) * cell_volume**2


def fourth_moment_oracle(C: np.ndarray, beta: float, phi, cell_volume: float = 1.0) -> float:
    """``E mu_beta(phi)^4`` for real ``beta``: ``sum_ijkl prod phi h^{4d} exp(beta^2 sum_pairs C)``."""
    C = np.asarray(C, float)
    phi = np.broadcast_to(np.asarray(phi, float), C.shape[:1])
    e = float(beta) ** 2 * C
    m = float(e.max())
    E = np.exp(e - m)  # every term carries six pair factors, hence exp(6 m) below
    V = phi[None, None, :] * E[:, None, :] * E[None, :, :]
    total = float(np.einsum("i,j,ij,ijk,kl,ijl->", phi, phi, E, V, E, V, optimize=True)) * math.exp(6 * m)
    return total * cell_volume**4


# ---------------------------------------------------------------------------
# complex beta
# ---------------------------------------------------------------------------


def domain_A_contains(beta: complex, d: int) -> bool:
    """Open hull of ``B(0, sqrt d)`` and ``+-sqrt(2d)``."""
    b = complex(beta)
    re, im = abs(b.real), abs(b.imag)
    if abs(b) < math.sqrt(d):
        return True
    return re >= math.sqrt(d / 2) and re + im < math.sqrt(2 * d)


def c_beta(beta: complex, p: float, d: int) -> float:
    b = complex(beta)
    return (p * p - p) * b.real**2 / 2 + p * b.imag**2 / 2 - d * (p - 1)


def choose_p(beta: complex, d: int, grid=None) -> tuple[float, float]:
    """``p in (1, 2)`` minimising ``c_beta``; raises :class:`RateNotNegative` if none is negative."""
    ps = np.linspace(1.001, 1.999, 999) if grid is None else np.asarray(grid, float)
    cs = np.array([c_beta(beta, p, d) for p in ps])
    i = int(np.argmin(cs))
    if cs[i] >= 0:
        raise RateNotNegative(beta, float(ps[i]), float(cs[i]))
    return float(ps[i]), float(cs[i])


def chaos_pairing_fn(X: np.ndarray, var, phi, cell_volume: float):
    """``beta -> mu_beta(phi)`` for fixed realizations (an entire function of ``beta``)."""
    X = np.asarray(X, float)
    var = np.broadcast_to(np.asarray(var, float), X.shape[-1:])
    phi = np.asarray(phi)

    def f(beta: complex) -> np.ndarray:
        beta = complex(beta)
        return np.sum(phi * np.exp(beta * X - 0.5 * beta * beta * var), axis=-1) * cell_volume

    return f


def contour_integral(f: Callable[[complex], np.ndarray], center: complex, radius: float, m: int = 16) -> tuple[np.ndarray, np.ndarray]:
    """Trapezoidal ``oint f dbeta`` over a circle and the scale ``2 pi r mean|f|`` it is compared with."""
    theta = 2 * math.pi * np.arange(m) / m
    pts = center + radius * np.exp(1j * theta)
    vals = np.array([f(b) for b in pts])
    integral = np.tensordot(1j * radius * np.exp(1j * theta), vals, axes=(0, 0)) * (2 * math.pi / m)
    scale = 2 * math.pi * radius * np.mean(np.abs(vals), axis=0)
    return integral, scale


# ---------------------------------------------------------------------------
# level-increment moment decay
# ---------------------------------------------------------------------------


def nodes_for_level(t: float, per_scale: float = 2.0, d: int = 1) -> int:
    """Power of two ``n`` with ``1/n <= e^{-t} / per_scale``."""
    need = per_scale * math.exp(t)
    return 1 << max(3, int(math.ceil(math.log2(need))))


@dataclass
class MomentDecay:
    levels: np.ndarray
    moments: np.ndarray
    standard_errors: np.ndarray
    slope: float
    intercept: float
    c_beta: float
    p: float
    beta: complex

    @property
    def log_moments(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.moments)

    def fit(self) -> np.ndarray:
        return self.intercept + self.slope * self.levels

    def decreasing_after(self, n0: int = 2) -> bool:
        m = self.moments[self.levels >= n0]
        return bool(np.all(np.diff(m) < 0))


def _window(x: np.ndarray) -> np.ndarray:
    """Smooth test function on ``[0, 1]^d`` centred at 1/2."""
    return default_mollifier((x - 0.5) / 0.45)


def increment_moment_decay(
    seed_cov: SeedCovariance,
    beta: complex,
    p: float | None = None,
    levels=range(1, 9),
    n_samples: int = 10_000,
    rng_seed: int = 0,
    delta: float = 0.5,
    psi: Callable[[np.ndarray], np.ndarray] | None = None,
    per_scale: float = 2.0,
    workers: int | None = None,
) -> MomentDecay:
    """``M_n = E |int psi (nu_{n+1} - nu_n)|^p`` for the star-scale field at unit-spaced levels.

    Each level is simulated on its own periodic grid resolving ``e^{-(n+1)}``;
    ``Y_n`` and the increment ``Y_{n+1} - Y_n`` are independent layers.
    """
    d = seed_cov.dimension
    beta = complex(beta)
    if p is None:
        p, cb = choose_p(beta, d)
    else:
        cb = c_beta(beta, p, d)
        if cb >= 0 and beta != 0:
            raise RateNotNegative(beta, p, cb)
    psi = _window if psi is None else psi
    levels = np.asarray(list(levels), dtype=float)
    mom, ses = [], []
    for n in levels:
        if beta == 0:
            mom.append(0.0)
            ses.append(0.0)
            continue
        nodes = nodes_for_level(n + 1, per_scale, d)
        pl = PeriodicLayers(seed_cov, delta, nodes)
        roots = [pl.spectrum("Y", 0.0, n), pl.spectrum("Y", n, n + 1)]
        g = pl.grid
        w = psi(g.points()) * g.cell_volume
        b2 = beta * beta

        def block(bi, rows, n=n, pl=pl, roots=roots, w=w, b2=b2):
            yn, inc = pl.draw(roots, rng_seed, (60, int(n)), bi, rows)
            nu_n = np.exp(beta * yn - 0.5 * b2 * n)
            nu_n1 = nu_n * np.exp(beta * inc - 0.5 * b2)
            return np.abs((nu_n1 - nu_n) @ w) ** p

        vals = np.concatenate(parallel_map(lambda b: block(b[0], b[2] - b[1]), block_ranges(n_samples), workers))
        mom.append(float(vals.mean()))
        ses.append(float(vals.std(ddof=1) / math.sqrt(vals.size)))
    mom = np.array(mom)
    if np.all(mom == 0):
        return MomentDecay(levels, mom, np.array(ses), -math.inf, -math.inf, cb, p, beta)
    slope, intercept = np.polyfit(levels, np.log(mom), 1)
    return MomentDecay(levels, mom, np.array(ses), float(slope), float(intercept), cb, p, beta)


def check_decay(res: MomentDecay, slack: float = 0.25) -> None:
    if not res.slope <= res.c_beta + slack:
        raise RateNotNegative(res.beta, res.p, res.slope)


# ---------------------------------------------------------------------------
# critical regime
# ---------------------------------------------------------------------------


def _level_field_blocks(seed_cov, delta, t, nodes, n_samples, rng_seed, key, fn, workers=None):
    """``fn(y, grid)`` on sub-chunks of ``Y_t`` samples over ``[0, 1)^d``, in block order."""
    pl = PeriodicLayers(seed_cov, delta, nodes)
    root = pl.spectrum("Y", 0.0, t)
    g = pl.grid

    def run(b):
        return pl.draw([root], rng_seed, key, b[0], b[2] - b[1], lambda ls: fn(ls[0], g))

    return parallel_map(run, block_ranges(n_samples), workers), g


@dataclass
class CriticalRatio:
    t: float
    d: int
    ratios: np.ndarray
    median: float
    grid: GridSpec | None = None
    target: float = math.sqrt(math.pi / 2)

    def relative_deviation(self) -> float:
        return abs(self.median / self.target - 1.0)


def derivative_sh_ratio(
    seed_cov: SeedCovariance,
    t: float,
    n_samples: int = 2000,
    rng_seed: int = 0,
    nodes: int | None = None,
    delta: float = 0.5,
    workers: int | None = None,
) -> CriticalRatio:
    """Per-realization ``D_t / SH_t`` of total masses on ``[0, 1]^d`` for the level-``t`` field."""
    d = seed_cov.dimension
    nodes = nodes_for_level(t, 2.0, d) if nodes is None else nodes
    bc = critical_beta(d)

    def fn(y, g):
        mu_d = chaos_cells(y, t, bc, "derivative", level=t, grid=g)
        mu_sh = chaos_cells(y, t, bc, "seneta_heyde", level=t, grid=g)
        return pair_with_test_function(mu_d, 1.0) / pair_with_test_function(mu_sh, 1.0)

    parts, g = _level_field_blocks(seed_cov, delta, t, nodes, n_samples, rng_seed, (70, d), fn, workers)
    r = np.concatenate(parts)
    return CriticalRatio(t, d, r, float(np.median(r)), g)


@dataclass
class RatioScan:
    betas: np.ndarray
    medians: np.ndarray
    ratios: np.ndarray
    t: float

    def distances(self) -> np.ndarray:
        return np.abs(self.medians - 1.0)

    def monotone_toward_one(self) -> bool:
        return bool(np.all(np.diff(self.distances()) <= 0))


def critical_ratio_scan(
    seed_cov: SeedCovariance,
    betas,
    t: float = 6.0,
    n_samples: int = 2000,
    rng_seed: int = 0,
    nodes: int = 64,
    delta: float = 0.5,
    workers: int | None = None,
) -> RatioScan:
    """``[mu_beta(1) / (2 - beta)] / [sqrt(2 pi) mu_2^SH(1)]`` per realization, d = 2."""
    if seed_cov.dimension != 2:
        raise ValueError("the subcritical-to-critical scan is a d = 2 statement")
    betas = np.asarray(betas, float)
    if np.any(betas >= 2) or np.any(np.diff(betas) <= 0):
        raise ValueError("betas must increase and stay below 2")

    def fn(y, g):
        sh = pair_with_test_function(chaos_cells(y, t, 2.0, "seneta_heyde", level=t, grid=g), 1.0)
        rows = []
        for b in betas:
            mb = pair_with_test_function(chaos_cells(y, t, b, "subcritical", level=t, grid=g), 1.0)
            rows.append(mb / (2.0 - b) / (math.sqrt(2 * math.pi) * sh))
        return np.stack(rows, axis=1)

    parts, _ = _level_field_blocks(seed_cov, delta, t, nodes, n_samples, rng_seed, (80, 2), fn, workers)
    r = np.concatenate(parts)
    return RatioScan(betas, np.median(r, axis=0), r, t)


def level_field(seed_cov: SeedCovariance, t: float, n_samples: int, rng_seed: int, nodes: int | None = None, delta: float = 0.5, key=(90,)) -> tuple[np.ndarray, GridSpec]:
    """Samples of ``Y_t`` on ``[0, 1)^d`` (all rows in memory; for moderate sizes)."""
    d = seed_cov.dimension
    nodes = nodes_for_level(t, 2.0, d) if nodes is None else nodes
    parts, g = _level_field_blocks(seed_cov, delta, t, nodes, n_samples, rng_seed, key, lambda y, g: y)
    return np.concatenate(parts), g
