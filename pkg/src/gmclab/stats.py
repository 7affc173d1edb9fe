"""Standard-error checks for Monte Carlo estimates.

A matrix of ``m`` estimates is compared at a family-wise level equal to the
two-sided 3-sigma rate of a single estimate (Bonferroni), so that ``3 SE``
keeps its meaning when many entries are tested at once.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

THREE_SIGMA_RATE = 2.0 * norm.sf(3.0)


def family_threshold(m: int, k: float = 3.0) -> float:
    """Per-entry z threshold giving the same false-alarm rate as one ``k``-sigma test."""
    if m <= 1:
        return k
    return float(norm.isf(norm.sf(k) / m))


@dataclass
class SEReport:
    max_z: float
    threshold: float
    n_tests: int
    beyond_3se: int
    ok: bool

    def __str__(self) -> str:
        return f"max|z|={self.max_z:.3f} (threshold {self.threshold:.3f}, {self.n_tests} tests, {self.beyond_3se} beyond 3 SE)"


def z_check(estimate, exact, se, k: float = 3.0, atol: float = 1e-12) -> SEReport:
    est = np.asarray(estimate, float).ravel()
    ex = np.asarray(exact, float).ravel()
    se = np.broadcast_to(np.asarray(se, float), np.shape(estimate)).ravel()
    diff = np.abs(est - ex)
    degenerate = se <= 0
    if np.any(degenerate & (diff > atol)):
        return SEReport(np.inf, family_threshold(est.size, k), est.size, int(np.sum(degenerate & (diff > atol))), False)
    z = np.where(degenerate, 0.0, diff / np.where(degenerate, 1.0, se))
    thr = family_threshold(est.size, k)
    mz = float(z.max()) if z.size else 0.0
    return SEReport(mz, thr, est.size, int(np.sum(z > k)), mz <= thr)


def mean_check(samples, exact, k: float = 3.0, axis: int = 0) -> SEReport:
    """Sample means against exact values, SE estimated from the sample."""
    x = np.asarray(samples, float)
    n = x.shape[axis]
    se = x.std(axis=axis, ddof=1) / np.sqrt(n)
    return z_check(x.mean(axis=axis), exact, se, k)


def covariance_check(samples: np.ndarray, exact: np.ndarray, k: float = 3.0) -> SEReport:
    """Upper-triangle entries of ``E[Y Y^T]`` from samples of a centred Gaussian.

    The SE of entry ``(i, j)`` uses the Gaussian identity
    ``Var(Y_i Y_j) = C_ii C_jj + C_ij^2`` with the exact ``C``.
    """
    y = np.asarray(samples, float)
    n = y.shape[0]
    emp = y.T @ y / n
    iu = np.triu_indices(exact.shape[0])
    var = np.outer(np.diag(exact), np.diag(exact)) + exact**2
    se = np.sqrt(np.maximum(var, 0.0) / n)
    return z_check(emp[iu], exact[iu], se[iu], k, atol=1e-12 * max(1.0, float(np.abs(exact).max())))
