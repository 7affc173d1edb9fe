"""Spectral splitting of symmetric kernels and the Gaussian coupling built on it.

Operators act on the discrete ``L^2`` of a grid with cell-volume weights
``w``: ``(T f)(x_i) = sum_j K(x_i, x_j) f(x_j) w_j``.  The eigenproblem is
solved for ``W^{1/2} K W^{1/2}``, whose Frobenius norm is the weighted
Hilbert-Schmidt norm of ``T``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import (
    BudgetUnreachable,
    ClippedEigenvalueWarning,
    EigensolverFailure,
    NotACoupling,
    NotPSD,
    ResidualNotPSD,
)
from .grid import GridSpec
from .rng import standard_normals
from .sobolev import PeriodicGridFunction, h_s_norm

CLIP_TOL = 1e-8
NULL_TOL = 1e-12
WARN_TOL = 1e-12


@dataclass
class DiscretizedOperator:
    matrix: np.ndarray
    weights: np.ndarray
    grid: GridSpec | None = None

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("operator matrix must be square")
        asym = float(np.max(np.abs(m - m.T))) if m.size else 0.0
        if asym > 1e-12 * max(1.0, float(np.max(np.abs(m)))):
            raise ValueError(f"matrix is not symmetric (max asymmetry {asym:.3g})")
        self.matrix = 0.5 * (m + m.T)
        w = np.broadcast_to(np.asarray(self.weights, dtype=float), (m.shape[0],)).copy()
        if np.any(w <= 0):
            raise ValueError("weights must be positive")
        self.weights = w

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def like(self, matrix: np.ndarray) -> "DiscretizedOperator":
        return DiscretizedOperator(matrix, self.weights, self.grid)

    def hs_norm(self) -> float:
        sw = np.sqrt(self.weights)
        return float(np.linalg.norm(sw[:, None] * self.matrix * sw[None, :]))

    def row_norms(self) -> np.ndarray:
        """Weighted row norms ``(sum_j K_ij^2 w_j)^{1/2}``."""
        return np.sqrt(np.sum(self.matrix**2 * self.weights[None, :], axis=1))

    def as_grid_function(self) -> PeriodicGridFunction:
        """The kernel as a function on the doubled lattice (needs a grid)."""
        if self.grid is None:
            return PeriodicGridFunction(self.matrix, 1.0)
        g = self.grid
        return PeriodicGridFunction(self.matrix.reshape(g.shape + g.shape), g.spacing)


def discretize(kernel: Callable[[np.ndarray, np.ndarray], np.ndarray], grid: GridSpec) -> DiscretizedOperator:
    """``K(x_i, x_j)`` on the grid with weights ``h^d``; ``kernel`` takes broadcast point arrays."""
    p = grid.points()
    m = np.asarray(kernel(p[:, None, :], p[None, :, :]), dtype=float)
    m = np.broadcast_to(m, (grid.size, grid.size))
    return DiscretizedOperator(m, grid.cell_volume, grid)


@dataclass
class SpectralDecomposition:
    """``K = sum_k lam_k g_k g_k^T`` with ``g_k`` orthonormal in the weighted product."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    weights: np.ndarray

    def reconstruct(self, values: np.ndarray | None = None) -> np.ndarray:
        lam = self.eigenvalues if values is None else values
        return (self.eigenvectors * lam) @ self.eigenvectors.T

    def gram(self) -> np.ndarray:
        g = self.eigenvectors
        return g.T @ (g * self.weights[:, None])


def spectral_decomposition(op: DiscretizedOperator) -> SpectralDecomposition:
    sw = np.sqrt(op.weights)
    b = sw[:, None] * op.matrix * sw[None, :]
    try:
        lam, v = np.linalg.eigh(b)
    except np.linalg.LinAlgError as exc:
        raise EigensolverFailure(str(exc)) from exc
    if not np.all(np.isfinite(lam)):
        raise EigensolverFailure("non-finite eigenvalues")
    order = np.argsort(-np.abs(lam), kind="stable")
    return SpectralDecomposition(lam[order], v[:, order] / sw[:, None], op.weights)


def _sym(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def absolute_kernel(op: DiscretizedOperator) -> DiscretizedOperator:
    """``K_{|T|} = sum |lam_k| g_k g_k^T``."""
    dec = spectral_decomposition(op)
    return op.like(_sym(dec.reconstruct(np.abs(dec.eigenvalues))))


def positive_parts(op: DiscretizedOperator) -> tuple[DiscretizedOperator, DiscretizedOperator]:
    """``(K_+, K_-)`` with ``K_+ - K_- = K`` and ``K_+ + K_- = K_{|T|}``."""
    dec = spectral_decomposition(op)
    minus = _sym(dec.reconstruct(np.maximum(-dec.eigenvalues, 0.0)))
    plus = op.matrix + minus
    return op.like(plus), op.like(minus)


def min_eigenvalue(matrix: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(_sym(np.asarray(matrix, float)))[0])


def psd_factor(matrix: np.ndarray, what: str = "covariance", error=NotPSD, reference: float | None = None) -> np.ndarray:
    """``F`` with ``F F^T = C`` after the negative-eigenvalue policy.

    Eigenvalues in ``[-1e-8 lam_max, 0)`` are clipped to 0 (a warning is
    raised only below ``-1e-12 lam_max``); anything lower aborts.  Eigenvalues
    below ``1e-12 lam_max`` are treated as numerical null space.  ``reference``
    replaces ``lam_max`` as the scale, for matrices that are differences of
    larger ones.
    """
    c = _sym(np.asarray(matrix, dtype=float))
    if not np.any(c):
        return np.zeros_like(c)
    try:
        lam, v = np.linalg.eigh(c)
    except np.linalg.LinAlgError as exc:
        raise EigensolverFailure(str(exc)) from exc
    scale = max(float(np.max(np.abs(lam))), reference or 0.0, 1e-300)
    if lam[0] < -CLIP_TOL * scale:
        raise error(f"{what} has eigenvalue {lam[0]:.3g} below -{CLIP_TOL:g} x {scale:.3g}")
    if lam[0] < -WARN_TOL * scale:
        warnings.warn(f"{what}: clipped eigenvalue {lam[0]:.3g}", ClippedEigenvalueWarning, stacklevel=2)
    lam = np.where(lam > NULL_TOL * scale, lam, 0.0)
    return v * np.sqrt(lam)


def pseudo_inverse(matrix: np.ndarray, cutoff: float = NULL_TOL) -> np.ndarray:
    lam, v = np.linalg.eigh(_sym(matrix))
    scale = max(float(np.max(np.abs(lam))), 1e-300)
    inv = np.where(lam > cutoff * scale, 1.0 / np.where(lam > cutoff * scale, lam, 1.0), 0.0)
    return _sym((v * inv) @ v.T)


@dataclass
class Truncation:
    operator: DiscretizedOperator
    rank: int
    remainder_norm: float
    s: float


def _remainder_norm(op: DiscretizedOperator, rem: np.ndarray, s: float) -> float:
    return h_s_norm(op.like(rem).as_grid_function(), s)


def finite_rank_truncate(op: DiscretizedOperator, rank: int | None = None, budget: float | None = None, s: float = 0.0) -> Truncation:
    """Keep the ``rank`` largest-``|lam|`` terms, or the fewest meeting ``||K - K_m||_{H^s} < budget``."""
    if (rank is None) == (budget is None):
        raise ValueError("give exactly one of rank or budget")
    dec = spectral_decomposition(op)
    n = op.n
    if rank is not None:
        if not 0 <= rank <= n:
            raise ValueError("rank must lie in [0, n]")
        kept = dec.reconstruct(np.where(np.arange(n) < rank, dec.eigenvalues, 0.0))
        rem = op.matrix - kept
        return Truncation(op.like(_sym(kept)), rank, _remainder_norm(op, rem, s), s)
    for m in range(n):
        kept = dec.reconstruct(np.where(np.arange(n) < m, dec.eigenvalues, 0.0))
        rn = _remainder_norm(op, op.matrix - kept, s)
        if rn < budget:
            return Truncation(op.like(_sym(kept)), m, rn, s)
    raise BudgetUnreachable(f"remainder norm {rn:.3g} at rank {n - 1} exceeds budget {budget:.3g}")


def mixed_sobolev_energy(op: DiscretizedOperator, s: float) -> float:
    """``l^{-2d} sum |K-hat(xi, eta)|^2 (1 + |xi|^{2s} + |eta|^{2s})`` on the doubled torus."""
    f = op.as_grid_function()
    d = f.dim // 2
    freqs = np.meshgrid(*f.frequencies(), indexing="ij")
    xi2 = sum(a * a for a in freqs[:d])
    eta2 = sum(a * a for a in freqs[d:])
    w = 1.0 + xi2**s + eta2**s
    return float(np.sum(w * np.abs(f.fourier()) ** 2) / f.side**f.dim)


@dataclass
class SplitResult:
    plus: DiscretizedOperator
    minus: DiscretizedOperator
    target: np.ndarray
    min_eigenvalues: tuple[float, float]
    sobolev_norms: tuple[float, float]
    s: float


def regular_difference_split(c1: DiscretizedOperator, c2: DiscretizedOperator, psi0, s: float | None = None) -> SplitResult:
    """Positive/negative parts of ``psi0(x) psi0(y) (C1 - C2)(x, y)``."""
    if c1.n != c2.n or not np.allclose(c1.weights, c2.weights):
        raise ValueError("operators live on different grids")
    psi0 = np.broadcast_to(np.asarray(psi0, float), (c1.n,))
    target = psi0[:, None] * (c1.matrix - c2.matrix) * psi0[None, :]
    plus, minus = positive_parts(c1.like(target))
    if s is None:
        s = (c1.grid.d if c1.grid is not None else 1) + 0.1
    norms = (h_s_norm(plus.as_grid_function(), s), h_s_norm(minus.as_grid_function(), s))
    return SplitResult(plus, minus, target, (min_eigenvalue(plus.matrix), min_eigenvalue(minus.matrix)), norms, s)


@dataclass
class GaussianCoupling:
    """Joint law of ``(X1, X2, G)`` with ``X1 = X2 + G``.

    With ``Sigma = C1 + C_{G-}`` and independent standard vectors
    ``z0, z1, z2``: ``S = F z0``, ``X_i = C_i Sigma^+ S + R_i^{1/2} z_i``.
    ``G_- = S - X1``, ``G_+ = S - X2`` and ``G = X1 - X2``.
    """

    c1: np.ndarray
    c2: np.ndarray
    c_gplus: np.ndarray
    c_gminus: np.ndarray
    factor: np.ndarray  # rows: S, X1, X2 stacked; columns: z0, z1, z2
    seed: int
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.c1.shape[0]

    def _rows(self, name: str) -> np.ndarray:
        n = self.n
        s, x1, x2 = self.factor[:n], self.factor[n : 2 * n], self.factor[2 * n :]
        return {"S": s, "X1": x1, "X2": x2, "G": x1 - x2, "G-": s - x1, "G+": s - x2}[name]

    def stacked_factor(self, names=("X1", "X2", "G")) -> np.ndarray:
        return np.vstack([self._rows(k) for k in names])

    def joint_covariance(self, names=("X1", "X2", "G")) -> np.ndarray:
        f = self.stacked_factor(names)
        return f @ f.T

    def covariance(self, a: str, b: str | None = None) -> np.ndarray:
        fa = self._rows(a)
        fb = fa if b is None else self._rows(b)
        return fa @ fb.T

    def contract_errors(self) -> dict[str, float]:
        """Max-abs violations of the coupling contract, from the exact factor."""
        sum_field = self._rows("X1") + self._rows("G-") - self._rows("X2") - self._rows("G+")
        return {
            "X1": float(np.max(np.abs(self.covariance("X1") - self.c1))),
            "X2": float(np.max(np.abs(self.covariance("X2") - self.c2))),
            "G-": float(np.max(np.abs(self.covariance("G-") - self.c_gminus))),
            "G+": float(np.max(np.abs(self.covariance("G+") - self.c_gplus))),
            "sum": float(np.max(np.diag(sum_field @ sum_field.T))),
        }

    def sample(self, n_samples: int, start: int = 0) -> dict[str, np.ndarray]:
        z = standard_normals(self.seed, (7,), n_samples, self.factor.shape[1], start)
        out = z @ self.factor.T
        n = self.n
        s, x1, x2 = out[:, :n], out[:, n : 2 * n], out[:, 2 * n :]
        return {"S": s, "X1": x1, "X2": x2, "G": x1 - x2, "G-": s - x1, "G+": s - x2}


def couple(c1, c2, c_gplus, c_gminus, seed: int, clip: bool = False, tol: float = 1e-9) -> GaussianCoupling:
    """Build the coupling; ``C1 + C_{G-} = C2 + C_{G+}`` is required.

    Residual covariances with eigenvalues below ``-1e-8 ||.||`` raise
    :class:`ResidualNotPSD` unless ``clip`` is set, in which case they are
    clipped with a warning.
    """
    mats = [np.asarray(m.matrix if isinstance(m, DiscretizedOperator) else m, float) for m in (c1, c2, c_gplus, c_gminus)]
    c1, c2, cgp, cgm = mats
    sigma = c1 + cgm
    gap = float(np.max(np.abs(sigma - c2 - cgp)))
    if gap > tol * max(1.0, float(np.max(np.abs(sigma)))):
        raise NotACoupling(f"C1 + C_G- and C2 + C_G+ differ by {gap:.3g}")
    sigma = _sym(0.5 * (sigma + c2 + cgp))
    pinv = pseudo_inverse(sigma)
    a1, a2 = c1 @ pinv, c2 @ pinv
    fs = psd_factor(sigma, "common sum")
    residuals = []
    for c, a in ((c1, a1), (c2, a2)):
        r = _sym(c - a @ c)
        # the residual is a difference, so its roundoff scales with c
        ref = float(np.max(np.abs(np.linalg.eigvalsh(_sym(c))))) if c.size else 0.0
        try:
            residuals.append(psd_factor(r, "residual covariance", ResidualNotPSD, ref))
        except ResidualNotPSD:
            if not clip:
                raise
            lam, v = np.linalg.eigh(r)
            warnings.warn(f"residual covariance clipped at {lam[0]:.3g}", ClippedEigenvalueWarning, stacklevel=2)
            residuals.append(v * np.sqrt(np.maximum(lam, 0.0)))
    n = c1.shape[0]
    zero = np.zeros((n, n))
    factor = np.block([
        [fs, zero, zero],
        [a1 @ fs, residuals[0], zero],
        [a2 @ fs, zero, residuals[1]],
    ])
    return GaussianCoupling(c1, c2, cgp, cgm, factor, seed)


def coupling_samples_csv(path, x_grid: np.ndarray, draw: dict[str, np.ndarray], index: int = 0) -> None:
    """Column-stacked ``x, X1, X2, G`` for one realisation."""
    cols = np.column_stack([x_grid, draw["X1"][index], draw["X2"][index], draw["G"][index]])
    np.savetxt(path, cols, delimiter=",", header="x,X1,X2,G", comments="", fmt="%.17g")


def split_demo_pair(n: int = 64, radius: float = 0.5, inner: float = 0.25, outer: float = 0.45, dilation: float = 2.0):
    """The demo pair: ``K_T`` for the bump seed against the seed ``k(dilation .)``.

    ``T = log(1/h)`` keeps the diagonal finite.  Returns the two operators on the
    full 1-d grid, the window ``psi0`` (1 on ``|x| <= inner``, 0 beyond
    ``outer``) and the indices of the inner nodes where ``psi0 = 1``.
    """
    from .kernels import bump_seed, kernel_matrix

    grid = GridSpec(1, n, radius)
    t = math.log(1.0 / grid.spacing)
    seed = bump_seed(1)
    c1 = DiscretizedOperator(kernel_matrix(seed, grid, "Y", None, 0.0, t), grid.cell_volume, grid)
    c2 = DiscretizedOperator(kernel_matrix(seed.dilate(dilation), grid, "Y", None, 0.0, t), grid.cell_volume, grid)
    x = np.abs(grid.axis())
    psi0 = np.ones(n)
    mid = (x > inner) & (x < outer)
    z = (x[mid] - inner) / (outer - inner)
    psi0[mid] = 1.0 / (1.0 + np.exp(1.0 / (1.0 - z) - 1.0 / z))
    psi0[x >= outer] = 0.0
    inner_idx = np.flatnonzero(x <= inner)
    return c1, c2, psi0, inner_idx


def coupling_demo(n: int = 64, seed: int = 0, clip: bool = False):
    """Coupling of the demo pair on the inner nodes, where ``psi0 = 1``.

    There ``C1 - C2 = G+ - G-`` holds exactly, so the split parts are the
    covariances of ``G+`` and ``G-``.  Returns ``(coupling, x, split)``.
    """
    c1, c2, psi0, idx = split_demo_pair(n)
    sp = regular_difference_split(c1, c2, psi0)
    sub = np.ix_(idx, idx)
    cp = couple(c1.matrix[sub], c2.matrix[sub], sp.plus.matrix[sub], sp.minus.matrix[sub], seed, clip=clip)
    return cp, c1.grid.axis()[idx], sp
