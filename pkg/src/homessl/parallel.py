"""Ordered thread-pool map and BLAS thread limiting.

Work is always split the same way regardless of the thread count and the
pieces are combined in submission order, so results are bitwise identical
between ``threads=1`` and ``threads>1`` as long as BLAS itself is pinned.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager


def map_ordered(fn, items, threads: int = 1) -> list:
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


@contextmanager
def blas_threads(n: int):
    """Limit BLAS/OpenMP pools to ``n`` threads for the duration of the block."""
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=max(1, int(n))):
        yield
