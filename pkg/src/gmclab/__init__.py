"""gmc-lab: a numerical lab for log-correlated Gaussian fields and multiplicative chaos."""
from __future__ import annotations

__version__ = "0.1.0"

from .errors import ConfigError, GMCLabError  # noqa: E402
from .grid import FieldSample, GridSpec  # noqa: E402
from .kernels import KernelSpec, SeedCovariance, bump_seed, poisson_seed, star_kernel, triangle_seed  # noqa: E402

__all__ = [
    "__version__",
    "ConfigError",
    "GMCLabError",
    "FieldSample",
    "GridSpec",
    "KernelSpec",
    "SeedCovariance",
    "bump_seed",
    "poisson_seed",
    "star_kernel",
    "triangle_seed",
]
