"""Counter-based random streams and order-preserving parallel maps.

Every stream is a Philox generator keyed by ``(master seed, *key)``, so a draw
depends only on its key and never on how work is split across workers.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

T = TypeVar("T")
R = TypeVar("R")

#: realizations per stream block in batched Monte Carlo
BLOCK = 1024


def stream(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def block_ranges(n_samples: int, block: int = BLOCK) -> list[tuple[int, int, int]]:
    """``(block index, start, stop)`` triples covering ``range(n_samples)``."""
    return [(b, s, min(s + block, n_samples)) for b, s in enumerate(range(0, n_samples, block))]


def standard_normals(seed: int, layer: int | tuple[int, ...], n_samples: int, dim: int, start: int = 0) -> np.ndarray:
    """``(n_samples, dim)`` normals; rows in block ``b`` come from stream ``(seed, *layer, b)``.

    ``start`` (a multiple of ``BLOCK``) offsets the block counter, so a long run
    can be produced in pieces that concatenate to the one-shot result.
    """
    if start % BLOCK:
        raise ValueError("start must be a multiple of the block size")
    key = (layer,) if isinstance(layer, (int, np.integer)) else tuple(layer)
    out = np.empty((n_samples, dim))
    first = start // BLOCK
    for b, s, e in block_ranges(n_samples):
        out[s:e] = stream(seed, *key, first + b).standard_normal((e - s, dim))
    return out


def default_workers() -> int:
    env = os.environ.get("GMC_LAB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def parallel_map(fn: Callable[[T], R], items: Iterable[T], workers: int | None = None) -> list[R]:
    """Like ``list(map(fn, items))``; results keep input order whatever the pool size."""
    items = list(items)
    workers = default_workers() if workers is None else max(1, workers)
    if workers == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def ordered_sum(parts: Sequence[np.ndarray | float]):
    total = 0.0
    for p in parts:
        total = total + p
    return total
