"""Gaussian field samplers: dense spectral, multiscale layers, cone, periodic.

All draws come from :func:`gmclab.rng.standard_normals`, keyed by the master
seed plus a layer key and the realization block, so results do not depend on
how work is scheduled.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy import integrate

from .errors import MissingFourierData, NoValidRadius, NotPSD
from .grid import FieldSample, GridSpec, pairwise_distances
from .kernels import (
    SeedCovariance,
    dilation_factor,
    kernel_matrix,
    layer_integral,
    layer_weight_integral,
    star_remainder,
    star_remainder_at_origin,
)
from .opsplit import DiscretizedOperator, min_eigenvalue, psd_factor
from .rng import block_ranges, parallel_map, standard_normals, stream

# layer keys: (kind code, layer index)
_KIND_CODE = {"L": 1, "S": 2, "Y": 3}


def sample_direct(cov, n_samples: int, seed: int, key=(0,)) -> np.ndarray:
    """``(n_samples, n)`` draws of ``N(0, C)`` through the clipped spectral factor."""
    c = cov.matrix if isinstance(cov, DiscretizedOperator) else np.asarray(cov, float)
    f = psd_factor(c, "covariance", NotPSD)
    z = standard_normals(seed, key, n_samples, c.shape[0])
    return z @ f.T


# ---------------------------------------------------------------------------
# multiscale layers on a grid
# ---------------------------------------------------------------------------


@dataclass
class MultiscaleState:
    """Accumulated ``L_t`` and ``S_t`` samples at the last level of ``levels``."""

    seed_cov: SeedCovariance
    delta: float
    grid: GridSpec
    n_samples: int
    rng_seed: int
    levels: list[float] = field(default_factory=lambda: [0.0])
    L: np.ndarray | None = None
    S: np.ndarray | None = None
    streams: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        if self.L is None:
            self.L = np.zeros((self.n_samples, self.grid.size))
        if self.S is None:
            self.S = np.zeros((self.n_samples, self.grid.size))

    @property
    def t(self) -> float:
        return self.levels[-1]

    @property
    def Y(self) -> np.ndarray:
        return self.L + self.S

    def field(self, kind: str = "Y") -> FieldSample:
        vals = {"L": self.L, "S": self.S, "Y": self.Y}[kind]
        return FieldSample(self.grid, vals, self.t, {"sampler": "multiscale", "seed": self.rng_seed, "kind": kind})


def start_multiscale(seed_cov: SeedCovariance, delta: float, grid: GridSpec, n_samples: int, rng_seed: int) -> MultiscaleState:
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    return MultiscaleState(seed_cov, delta, grid, n_samples, rng_seed)


def advance_multiscale(state: MultiscaleState, next_t: float, layer: int | None = None) -> MultiscaleState:
    """Add independent ``L`` and ``S`` increments over ``[t, next_t]``.

    ``layer`` names the RNG streams (default: the number of levels so far);
    reusing a layer index of the same state is refused.
    """
    t0 = state.t
    if not next_t > t0:
        raise ValueError(f"next level {next_t} must exceed the current level {t0}")
    layer = len(state.levels) - 1 if layer is None else int(layer)
    keys = [(_KIND_CODE["L"], layer), (_KIND_CODE["S"], layer)]
    if any(k in state.streams for k in keys):
        raise ValueError(f"layer stream {layer} already used")
    incs = []
    for kind, key in zip(("L", "S"), keys):
        c = kernel_matrix(state.seed_cov, state.grid, kind, state.delta, t0, next_t)
        incs.append(sample_direct(c, state.n_samples, state.rng_seed, key))
    return replace(
        state,
        levels=state.levels + [float(next_t)],
        L=state.L + incs[0],
        S=state.S + incs[1],
        streams=state.streams + keys,
    )


def run_multiscale(seed_cov, delta, grid, levels, n_samples, rng_seed) -> list[MultiscaleState]:
    """States after each level of ``levels`` (default schedule: multiples of log 2)."""
    state = start_multiscale(seed_cov, delta, grid, n_samples, rng_seed)
    out = []
    for t in levels:
        state = advance_multiscale(state, t)
        out.append(state)
    return out


def default_schedule(t_max: float, step: float = math.log(2.0)) -> list[float]:
    m = int(math.floor(t_max / step + 1e-12))
    levels = [step * j for j in range(1, m + 1)]
    if not levels or levels[-1] < t_max - 1e-12:
        levels.append(t_max)
    return levels


def sample_S_infinity(seed_cov: SeedCovariance, delta: float, grid: GridSpec, n_samples: int, rng_seed: int) -> FieldSample:
    """Direct draw of ``S = S_inf``; pointwise variance is ``1/delta``."""
    c = kernel_matrix(seed_cov, grid, "S", delta, 0.0, math.inf)
    vals = sample_direct(c, n_samples, rng_seed, (_KIND_CODE["S"], 10_000))
    return FieldSample(grid, vals, math.inf, {"sampler": "S_infinity", "seed": rng_seed})


def standard_approximation_gap(seed_cov: SeedCovariance, grid: GridSpec, t: float) -> float:
    """``sup |K_t(x - y) - log(1 / max(e^-t, |x - y|))|`` over grid pairs."""
    c = kernel_matrix(seed_cov, grid, "Y", None, 0.0, t)
    r = pairwise_distances(grid.points())
    ref = np.log(1.0 / np.maximum(math.exp(-t), r))
    return float(np.max(np.abs(c - ref)))


# ---------------------------------------------------------------------------
# cone (hyperbolic white noise) sampler
# ---------------------------------------------------------------------------


def _root_profile(seed_cov: SeedCovariance) -> Callable[[np.ndarray], np.ndarray]:
    if seed_cov.root_profile is not None:
        return seed_cov.root_profile
    if seed_cov.fourier_profile is None:
        raise MissingFourierData(f"seed {seed_cov.name!r} has no Fourier data")
    if seed_cov.dimension != 1:
        raise MissingFourierData("numerical roots are only provided for d = 1")
    four = seed_cov.fourier_profile

    def root(r):
        r = np.atleast_1d(np.asarray(r, float))
        out = [2 * integrate.quad(lambda z: math.sqrt(max(float(four(np.array(z))), 0.0)), 0, np.inf, weight="cos", wvar=2 * math.pi * ri)[0]
               if ri > 0 else 2 * integrate.quad(lambda z: math.sqrt(max(float(four(np.array(z))), 0.0)), 0, np.inf)[0]
               for ri in r.ravel()]
        return np.array(out).reshape(r.shape)

    return root


@dataclass
class ConeDiscretization:
    """Cells of the white noise on ``R^d x (e^-t, 1)`` and their weights at the grid nodes."""

    matrix: np.ndarray  # nodes x cells, already scaled by sqrt(cell mass)
    n_cells: int
    du: float
    cells_per_width: int

    def covariance(self) -> np.ndarray:
        return self.matrix @ self.matrix.T


def cone_discretization(seed_cov: SeedCovariance, delta: float, grid: GridSpec, t: float, du: float = 0.05, cells_per_width: int = 8, reach: float = 12.0) -> ConeDiscretization:
    """Midpoint rule in ``u = log(1/y)`` and a uniform spatial lattice of step ``y / cells_per_width``.

    The cell measure is ``int y^{-(d+1)} (1 - y^delta) dx dy``; the kernel is
    ``h(x, y) = q(x / y)`` with ``q * q = k``.  Roots without compact support
    are cut at ``reach * y``.
    """
    q = _root_profile(seed_cov)
    d = grid.d
    nodes = grid.points()
    if t <= 0:
        return ConeDiscretization(np.zeros((grid.size, 0)), 0, du, cells_per_width)
    m = max(1, int(math.ceil(t / du)))
    step_u = t / m
    support = seed_cov.root_support if math.isfinite(seed_cov.root_support) else reach
    lo = nodes.min(axis=0)
    hi = nodes.max(axis=0)
    blocks = []
    for j in range(m):
        u = (j + 0.5) * step_u
        y = math.exp(-u)
        hz = y / cells_per_width
        mass_u = math.exp(d * u) * (-math.expm1(-delta * u)) * step_u
        axes = []
        for i in range(d):
            a = math.floor((lo[i] - support * y) / hz)
            b = math.ceil((hi[i] + support * y) / hz)
            axes.append(hz * (np.arange(a, b + 1) + 0.5))
        centers = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
        r = pairwise_distances(nodes, centers) / y
        blocks.append(q(r) * math.sqrt(mass_u * hz**d))
    mat = np.hstack(blocks)
    return ConeDiscretization(mat, mat.shape[1], step_u, cells_per_width)


@dataclass
class ConeSample:
    field: FieldSample
    bias_bound: float
    target: np.ndarray
    discretized_covariance: np.ndarray


def sample_cone(seed_cov: SeedCovariance, delta: float, grid: GridSpec, t: float, n_samples: int, rng_seed: int, du: float = 0.05, cells_per_width: int = 8) -> ConeSample:
    """``L_t`` from the weighted hyperbolic white noise.

    The bias bound is the max-abs change of the discretised covariance when
    both resolutions are halved (Richardson-style comparison).
    """
    fine = cone_discretization(seed_cov, delta, grid, t, du, cells_per_width)
    coarse = cone_discretization(seed_cov, delta, grid, t, 2 * du, max(1, cells_per_width // 2))
    c_fine = fine.covariance()
    bias = float(np.max(np.abs(c_fine - coarse.covariance()))) if fine.n_cells else 0.0
    target = kernel_matrix(seed_cov, grid, "L", delta, 0.0, t) if t > 0 else np.zeros((grid.size, grid.size))
    vals = np.zeros((n_samples, grid.size))
    if fine.n_cells:
        for b, s, e in block_ranges(n_samples):
            z = stream(rng_seed, 40, b).standard_normal((e - s, fine.n_cells))
            vals[s:e] = z @ fine.matrix.T
    fs = FieldSample(grid, vals, t, {"sampler": "cone", "seed": rng_seed})
    return ConeSample(fs, bias, target, c_fine)


# ---------------------------------------------------------------------------
# X = L + R
# ---------------------------------------------------------------------------


@dataclass
class Decomposition:
    grid: GridSpec
    lam0: float
    a: float
    shrinks: int
    min_eigenvalue: float
    c_L: np.ndarray
    c_R: np.ndarray
    c_X: np.ndarray
    L: np.ndarray
    R: np.ndarray

    @property
    def X(self) -> np.ndarray:
        return self.L + self.R

    @property
    def certified(self) -> bool:
        return self.min_eigenvalue >= -1e-8 * float(np.linalg.norm(self.c_R))


@dataclass
class RemainderSplit:
    """Validated ``C_X = C_L + C_R`` on a grid: ``C_R`` passed the PSD check there."""

    grid: GridSpec
    seed: SeedCovariance  # dilated seed behind L
    lam0: float
    a: float
    shrinks: int
    min_eigenvalue: float
    c_R: np.ndarray


def split_remainder(
    g: Callable[[np.ndarray, np.ndarray], np.ndarray],
    seed_cov: SeedCovariance,
    delta: float,
    grid: GridSpec,
    max_shrinks: int = 8,
) -> RemainderSplit:
    """Dilate the seed to match ``g`` at the origin and halve the grid until ``C_R`` is PSD.

    ``lam0 = max(1, e^-a)`` with ``a = g(0,0) - g0(0,0)``; ``C_R = C_S + g - g0``
    from the dilated seed.
    """
    if not math.isfinite(seed_cov.support_radius) or seed_cov.support_radius > 1.0:
        raise ValueError("the decomposition needs a seed supported in the unit ball")
    g00 = float(np.asarray(g(np.zeros(grid.d), np.zeros(grid.d))))
    dil = dilation_factor(g00, star_remainder_at_origin(seed_cov))
    k = seed_cov.dilate(dil.lam0)
    g0_origin = star_remainder_at_origin(k)
    cur = grid
    last = -math.inf
    for shrink in range(max_shrinks + 1):
        p = cur.points()
        r = pairwise_distances(p)
        gv = np.asarray(g(p[:, None, :], p[None, :, :]), float)
        iu = np.triu_indices(cur.size, 1)
        g0 = np.full(r.shape, g0_origin)
        g0[iu] = star_remainder(k, r[iu])
        g0[(iu[1], iu[0])] = g0[iu]
        c_s = kernel_matrix(k, cur, "S", delta, 0.0, math.inf)
        c_r = 0.5 * ((c_s + gv - g0) + (c_s + gv - g0).T)
        last = min_eigenvalue(c_r)
        if last >= -1e-8 * float(np.linalg.norm(c_r)):
            return RemainderSplit(cur, k, dil.lam0, dil.a, shrink, last, c_r)
        cur = cur.scaled(0.5)
    raise NoValidRadius(f"C_R not PSD after {max_shrinks} shrinks", last)


def decompose_X(
    g: Callable[[np.ndarray, np.ndarray], np.ndarray],
    seed_cov: SeedCovariance,
    delta: float,
    grid: GridSpec,
    n_samples: int,
    rng_seed: int,
    max_shrinks: int = 8,
) -> Decomposition:
    """Sample ``X = L + R`` for ``C_X = log(1/|x-y|) + g`` near the grid centre.

    The split is :func:`split_remainder`.  On the grid ``L`` is the truncation
    at ``T = log(1/h)``, which has the exact off-diagonal covariance because
    the seed has support in the unit ball.
    """
    sp = split_remainder(g, seed_cov, delta, grid, max_shrinks)
    cur = sp.grid
    p = cur.points()
    r = pairwise_distances(p)
    gv = np.asarray(g(p[:, None, :], p[None, :, :]), float)
    c_l = kernel_matrix(sp.seed, cur, "L", delta, 0.0, math.log(1.0 / cur.spacing))
    with np.errstate(divide="ignore"):
        c_x = np.where(r > 0, -np.log(np.where(r > 0, r, 1.0)), np.nan) + gv
    L = sample_direct(c_l, n_samples, rng_seed, (50,))
    R = sample_direct(sp.c_R, n_samples, rng_seed, (51,))
    return Decomposition(cur, sp.lam0, sp.a, sp.shrinks, sp.min_eigenvalue, c_l, sp.c_R, c_x, L, R)


# ---------------------------------------------------------------------------
# exact periodic sampler for compactly supported seeds
# ---------------------------------------------------------------------------


def torus_radii(n: int, d: int, spacing: float) -> np.ndarray:
    j = np.arange(n)
    off = np.minimum(j, n - j) * spacing
    mesh = np.meshgrid(*([off] * d), indexing="ij")
    return np.sqrt(sum(m * m for m in mesh))


@dataclass
class PeriodicLayers:
    """Exact sampling of layer fields on ``[0, length)^d`` through a torus of side ``2 length``.

    When the layer covariance has support radius <= ``length`` its periodisation
    on the doubled torus coincides with the plane covariance on the domain, and
    its discrete spectrum is the aliased (hence non-negative) Fourier transform.
    """

    seed_cov: SeedCovariance
    delta: float
    n: int  # nodes per side of the domain
    length: float = 1.0
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def d(self) -> int:
        return self.seed_cov.dimension

    @property
    def spacing(self) -> float:
        return self.length / self.n

    @property
    def torus_n(self) -> int:
        return 2 * self.n

    @property
    def grid(self) -> GridSpec:
        half = 0.5 * self.length
        return GridSpec(self.d, self.n, half, (half,) * self.d)

    def covariance_row(self, kind: str, t0: float, t1: float) -> np.ndarray:
        r = torus_radii(self.torus_n, self.d, self.spacing)
        return layer_integral(self.seed_cov, r, t0, t1, kind, self.delta)

    def spectrum(self, kind: str, t0: float, t1: float) -> np.ndarray:
        reach = self.seed_cov.support_radius * math.exp(-t0)
        if not reach <= self.length * (1 + 1e-12):
            raise ValueError(f"layer support {reach:.3g} exceeds the domain side {self.length:.3g}")
        key = (kind, float(t0), float(t1))
        if key not in self._cache:
            lam = np.fft.fftn(self.covariance_row(kind, t0, t1)).real
            floor = -1e-10 * max(float(lam.max()), 1e-300)
            if lam.min() < floor:
                raise NotPSD(f"periodic spectrum reaches {lam.min():.3g}")
            self._cache[key] = np.sqrt(np.maximum(lam, 0.0))
        return self._cache[key]

    def draw(self, roots: list[np.ndarray], rng_seed: int, key: tuple, block: int, rows: int, reduce: Callable | None = None, max_elements: int = 2_000_000):
        """One block of ``rows`` realizations of each independent layer in ``roots``.

        Without ``reduce`` returns arrays ``(rows, n**d)`` on the domain in C
        order.  With ``reduce`` the layers are produced in sub-chunks and
        ``reduce(list_of_layer_chunks)`` is applied to each, the per-row
        results being concatenated; the block is never held in full.
        """
        shape = (self.torus_n,) * self.d
        sl = (slice(None),) + (slice(0, self.n),) * self.d
        axes = tuple(range(1, self.d + 1))
        sub = max(1, max_elements // int(np.prod(shape)))
        # consecutive draws from one generator equal a single large draw
        gens = [stream(rng_seed, *key, i, block) for i in range(len(roots))]
        chunks = []
        for s in range(0, rows, sub):
            m = min(sub, rows - s)
            layers = []
            for gen, root in zip(gens, roots):
                z = gen.standard_normal((m,) + shape)
                f = np.fft.ifftn(np.fft.fftn(z, axes=axes) * root, axes=axes).real
                layers.append(np.ascontiguousarray(f[sl]).reshape(m, -1))
            chunks.append(layers if reduce is None else reduce(layers))
        if reduce is None:
            return [np.concatenate([c[i] for c in chunks]) for i in range(len(roots))]
        return np.concatenate(chunks)

    def map_blocks(self, fn: Callable[[int, int], object], n_samples: int, workers: int | None = None) -> list:
        """``fn(block, rows)`` over the realization blocks, in block order."""
        return parallel_map(lambda b: fn(b[0], b[2] - b[1]), block_ranges(n_samples), workers)


def layer_variance(kind: str, delta: float | None, t0: float, t1: float) -> float:
    return layer_weight_integral(kind, delta, t0, t1)
