from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, TypeVar

T = TypeVar("T")


def chunk_bounds(n_items: int, chunk: int) -> list[tuple[int, int]]:
    return [(a, min(a + chunk, n_items)) for a in range(0, n_items, chunk)]


def map_chunks(fn: Callable[[int, int], T], n_items: int, chunk: int, threads: int = 1) -> list[T]:
    """Apply ``fn(start, stop)`` to fixed-size chunks; results come back in chunk order.

    The chunk partition depends only on ``n_items`` and ``chunk``, never on
    ``threads``, so anything reduced from the returned list in order is
    independent of the worker count.
    """
    bounds = chunk_bounds(n_items, chunk)
    if threads <= 1 or len(bounds) <= 1:
        return [fn(a, b) for a, b in bounds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda ab: fn(*ab), bounds))
