"""Order-preserving map over a process pool."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")
R = TypeVar("R")

ENV_THREADS = "HDHT_THREADS"


def resolve_threads(threads: int | None) -> int:
    if threads is None:
        threads = int(os.environ.get(ENV_THREADS, "1") or 1)
    return max(1, int(threads))


def pmap(fn: Callable[[T], R], items: Iterable[T], threads: int | None = None) -> list[R]:
    """``[fn(x) for x in items]``, fanned out over ``threads`` worker processes.

    Results come back in input order, so any per-item randomness keyed on the
    item itself stays reproducible regardless of the worker count.
    """
    items = list(items)
    workers = min(resolve_threads(threads), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    chunk = max(1, len(items) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=chunk))
