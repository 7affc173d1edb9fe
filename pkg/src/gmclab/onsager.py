"""Onsager-type electrostatic inequality for log-correlated covariances.

For charges ``q_j = +-1`` at distinct points the energy
``-sum_{j<k} q_j q_k C(x_j, x_k)`` is compared with the budget
``1/2 sum_j log(1/r_j)``, ``r_j`` half the distance to the nearest neighbour.
For the pure ``L`` field the difference is certified non-positive through the
Gram matrix of the truncated variables ``G_j = L_{log(1/r_j)}(x_j)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NotCertified, SinglePoint
from .kernels import LayerTable, SeedCovariance, star_remainder_at_origin
from .rng import parallel_map, stream

Kernel = Callable[[np.ndarray, np.ndarray], np.ndarray]

#: smallest pairwise distance produced by the random configurations
MIN_DISTANCE = 1e-6


@dataclass(frozen=True)
class ChargeConfig:
    points: np.ndarray  # (n, d)
    charges: np.ndarray  # (n,) in {-1, +1}

    def __post_init__(self):
        p = np.atleast_2d(np.asarray(self.points, float))
        q = np.asarray(self.charges, float).ravel()
        if p.shape[0] != q.size:
            raise ValueError("one charge per point")
        if not np.all(np.abs(q) == 1):
            raise ValueError("charges must be +1 or -1")
        if q.size > 1 and _pair_distances(p).min() <= 0:
            raise ValueError("points must be pairwise distinct")
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "charges", q)

    @property
    def n(self) -> int:
        return self.charges.size

    def flipped(self) -> "ChargeConfig":
        return ChargeConfig(self.points, -self.charges)

    def to_dict(self) -> dict:
        return {"points": self.points.tolist(), "charges": self.charges.astype(int).tolist()}


def _pair_distances(p: np.ndarray) -> np.ndarray:
    iu = np.triu_indices(p.shape[0], 1)
    return np.linalg.norm(p[iu[0]] - p[iu[1]], axis=-1)


def neighbour_radii(cfg: ChargeConfig) -> np.ndarray:
    """``r_j = 1/2 min_{k != j} |x_j - x_k|``."""
    if cfg.n < 2:
        raise SinglePoint("nearest-neighbour radii need at least two points")
    diff = cfg.points[:, None, :] - cfg.points[None, :, :]
    dist = np.linalg.norm(diff, axis=-1)
    np.fill_diagonal(dist, np.inf)
    return 0.5 * dist.min(axis=1)


def interaction_energy(C: Kernel | np.ndarray, cfg: ChargeConfig) -> float:
    """``-sum_{j<k} q_j q_k C(x_j, x_k)``; ``C`` is a kernel or an ``(n, n)`` matrix."""
    if cfg.n < 2:
        return 0.0
    iu = np.triu_indices(cfg.n, 1)
    if callable(C):
        vals = np.asarray(C(cfg.points[iu[0]], cfg.points[iu[1]]), float)
    else:
        vals = np.asarray(C, float)[iu]
    return float(-np.sum(cfg.charges[iu[0]] * cfg.charges[iu[1]] * vals))


def onsager_budget(cfg: ChargeConfig) -> float:
    """``1/2 sum_j log(1/r_j)``."""
    return float(0.5 * np.sum(-np.log(neighbour_radii(cfg))))


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


def log_covariance(g: Callable | None = None) -> Kernel:
    """``log(1/|x-y|) + g(x, y)``."""

    def c(x, y):
        r = np.linalg.norm(np.asarray(x, float) - np.asarray(y, float), axis=-1)
        out = -np.log(r)
        return out if g is None else out + np.asarray(g(x, y), float)

    return c


def l_covariance(seed: SeedCovariance, delta: float, table: LayerTable | None = None) -> Kernel:
    """Untruncated ``C_L`` of a compactly supported seed."""
    tab = LayerTable(seed, delta) if table is None else table

    def c(x, y):
        return tab(np.linalg.norm(np.asarray(x, float) - np.asarray(y, float), axis=-1), "L")

    return c


def remainder_covariance(g: Callable, seed: SeedCovariance, delta: float, table: LayerTable | None = None) -> Kernel:
    """``C_R = C_S + g - g0`` for the (already dilated) seed, continuous on the diagonal."""
    tab = LayerTable(seed, delta) if table is None else table
    g0_origin = star_remainder_at_origin(seed)

    def c(x, y):
        r = np.linalg.norm(np.asarray(x, float) - np.asarray(y, float), axis=-1)
        r = np.asarray(r)
        g0 = np.full(r.shape, g0_origin)
        pos = r > 0
        g0[pos] = tab(r[pos], "Y") + np.log(r[pos])
        return tab(r, "S") + np.asarray(g(x, y), float) - g0

    return c


def sum_covariance(*kernels: Kernel) -> Kernel:
    return lambda x, y: sum(np.asarray(k(x, y), float) for k in kernels)


# ---------------------------------------------------------------------------
# random configurations and the empirical constant
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConfigGenerator:
    """Uniform points in ``B(0, radius)`` with random charges; trial ``i`` has its own stream."""

    d: int
    radius: float
    seed: int = 0
    n_min: int = 2
    n_max: int = 32
    min_distance: float = MIN_DISTANCE

    def __call__(self, trial: int) -> ChargeConfig:
        gen = stream(self.seed, 100, trial)
        n = int(gen.integers(self.n_min, self.n_max + 1))
        pts = np.empty((0, self.d))
        while pts.shape[0] < n:
            # uniform in the ball: Gaussian direction, radius ~ U^{1/d}
            z = gen.standard_normal(self.d)
            x = z / np.linalg.norm(z) * self.radius * gen.random() ** (1.0 / self.d)
            if pts.shape[0] == 0 or np.min(np.linalg.norm(pts - x, axis=1)) >= self.min_distance:
                pts = np.vstack([pts, x])
        q = np.where(gen.random(n) < 0.5, -1.0, 1.0)
        return ChargeConfig(pts, q)


@dataclass
class MinimalConstant:
    value: float
    argmax: ChargeConfig
    per_trial: np.ndarray

    def to_dict(self) -> dict:
        return {"n": int(self.argmax.n), "C_empirical": self.value, "argmax_config": self.argmax.to_dict()}


def excess_per_point(C: Kernel, cfg: ChargeConfig) -> float:
    return (interaction_energy(C, cfg) - onsager_budget(cfg)) / cfg.n


def minimal_constant(C: Kernel, config_generator: Callable[[int], ChargeConfig], trials: int, workers: int | None = None) -> MinimalConstant:
    """``max_i (energy - budget) / n`` over ``trials`` generated configurations."""
    if trials < 1:
        raise ValueError("need at least one trial")
    vals = np.array(parallel_map(lambda i: excess_per_point(C, config_generator(i)), range(trials), workers))
    best = int(np.argmax(vals))
    return MinimalConstant(float(vals[best]), config_generator(best), vals)


# ---------------------------------------------------------------------------
# Gram certificate for the pure L field
# ---------------------------------------------------------------------------


@dataclass
class GramCertificate:
    n: int
    min_eigenvalue: float
    offdiag_error: float
    energy: float
    budget: float
    passed: bool

    @property
    def slack(self) -> float:
        """``budget - energy``; the certificate shows it is >= 0."""
        return self.budget - self.energy

    def status(self) -> str:
        return "certified" if self.passed else "not certified"


def truncated_gram(cfg: ChargeConfig, k: SeedCovariance, delta: float, table: LayerTable | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Gram matrix of ``G_j = L_{T_j}(x_j)``, ``T_j = log(1/r_j)``, and the untruncated ``C_L``.

    Entries are ``int_0^{T_j ^ T_k} k(e^u (x_j - x_k)) (1 - e^{-delta u}) du``;
    the diagonal is ``T_j - (1 - e^{-delta T_j}) / delta``.
    """
    tab = LayerTable(k, delta) if table is None else table
    T = -np.log(neighbour_radii(cfg))
    if np.any(T <= 0):
        raise ValueError("neighbour radii must be < 1")
    n = cfg.n
    iu = np.triu_indices(n, 1)
    r = np.linalg.norm(cfg.points[iu[0]] - cfg.points[iu[1]], axis=-1)
    m = np.zeros((n, n))
    m[iu] = tab(r, "L", np.minimum(T[iu[0]], T[iu[1]]))
    m = m + m.T
    m[np.diag_indices(n)] = T + np.expm1(-delta * T) / delta
    full = np.zeros((n, n))
    full[iu] = tab(r, "L")
    full = full + full.T
    return m, full


def certify_gram(m: np.ndarray, untruncated: np.ndarray | None = None, tol: float = 1e-9) -> tuple[float, float]:
    """Check ``m`` is PSD and matches ``untruncated`` off the diagonal; returns ``(min eig, off-diagonal error)``."""
    m = np.asarray(m, float)
    lam = float(np.linalg.eigvalsh(0.5 * (m + m.T))[0])
    scale = max(float(np.max(np.abs(m))), 1.0)
    err = 0.0
    if untruncated is not None:
        off = ~np.eye(m.shape[0], dtype=bool)
        err = float(np.max(np.abs(m[off] - np.asarray(untruncated)[off]))) if m.shape[0] > 1 else 0.0
    if lam < -1e-12 * scale:
        raise NotCertified(f"Gram matrix has eigenvalue {lam:.3g}", lam)
    if err > tol:
        raise NotCertified(f"off-diagonal Gram entries differ from C_L by {err:.3g}", lam)
    return lam, err


def truncated_gram_certificate(cfg: ChargeConfig, k: SeedCovariance, delta: float, tol: float = 1e-9, table: LayerTable | None = None) -> GramCertificate:
    """Certify ``energy_L <= budget`` for one configuration via the truncated Gram matrix."""
    if not (math.isfinite(k.support_radius) and k.support_radius <= 1.0):
        raise ValueError("the certificate needs a seed supported in the unit ball")
    m, full = truncated_gram(cfg, k, delta, table)
    lam, err = certify_gram(m, full, tol)
    energy = interaction_energy(full, cfg)
    return GramCertificate(cfg.n, lam, err, energy, onsager_budget(cfg), True)


def onsager_report(result: MinimalConstant, certificate_status: str) -> dict:
    out = result.to_dict()
    out["certificate_status"] = certificate_status
    return out
