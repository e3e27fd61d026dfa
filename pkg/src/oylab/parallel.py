"""Replica pool.

Replica ``i`` of a run seeded by ``seed`` always sees the environment keyed
by ``replica_seed(seed, i)``, and results are stored by replica index, so
the output does not depend on how many workers share the work.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable

import numpy as np

THREADS_ENV = "OY_THREADS"


def resolve_threads(threads: int | None = None) -> int:
    if threads is None:
        raw = os.environ.get(THREADS_ENV, "1")
        try:
            threads = int(raw)
        except ValueError as exc:
            raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from exc
    if threads < 1:
        raise ValueError("thread count must be at least 1")
    return threads


def _run_chunk(func: Callable, lo: int, hi: int) -> list:
    return [func(i) for i in range(lo, hi)]


def map_replicas(func: Callable[[int], object], n: int, threads: int | None = None, chunk: int | None = None):
    """Evaluate ``func(i)`` for i in range(n) and return the results as an array in index order.

    ``func`` must be picklable when more than one worker is used.
    """
    threads = resolve_threads(threads)
    if threads == 1 or n < 2:
        results = [func(i) for i in range(n)]
    else:
        size = chunk or max(1, min(256, n // (4 * threads) or 1))
        bounds = [(lo, min(n, lo + size)) for lo in range(0, n, size)]
        results = []
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(_run_chunk, func, lo, hi) for lo, hi in bounds]
            for fut in futures:
                results.extend(fut.result())
    return np.array(results)
