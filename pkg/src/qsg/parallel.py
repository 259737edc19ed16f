"""Deterministic parallel map over replica index ranges.

Work is split into fixed-size index blocks whose boundaries depend only on
the problem, never on the worker count, and every replica draws from a
stream keyed by ``(master_seed, stream tag, index)``. Results are therefore
bit-identical for any number of workers.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Callable

import numpy as np

_DEFAULT_WORKERS = 1


def default_workers() -> int:
    return _DEFAULT_WORKERS


def set_default_workers(n: int) -> None:
    global _DEFAULT_WORKERS
    _DEFAULT_WORKERS = max(1, int(n))


def block_size_for(dim: int, budget: int = 1 << 20) -> int:
    """Replicas per block so that a block of dense dim x dim matrices stays small."""
    return int(max(1, min(256, budget // (dim * dim))))


def block_bounds(n: int, block: int):
    return [(a, min(a + block, n)) for a in range(0, n, block)]


def replica_map(fn: Callable[[int, int], np.ndarray], n: int, block: int, workers=None) -> np.ndarray:
    """Evaluate ``fn(start, stop)`` on consecutive blocks and concatenate in index order."""
    workers = default_workers() if workers is None else max(1, int(workers))
    bounds = block_bounds(int(n), int(block))
    if workers == 1 or len(bounds) == 1:
        parts = [fn(a, b) for a, b in bounds]
    else:
        workers = min(workers, len(bounds))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(fn, [a for a, _ in bounds], [b for _, b in bounds]))
    return np.concatenate(parts, axis=0)
