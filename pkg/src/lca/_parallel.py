"""Process-pool helper for embarrassingly parallel restarts and benchmark cells.

Worker count is capped by the ``LCA_THREADS`` environment variable
(0 or unset means auto-detect).  Tasks must be pure; results are returned in
submission order so parallel and serial execution are interchangeable.
"""

from __future__ import annotations

import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor


def resolve_workers(requested: int | None = None) -> int:
    cap = os.environ.get("LCA_THREADS", "0")
    try:
        cap_n = int(cap)
    except ValueError:
        cap_n = 0
    if cap_n <= 0:
        cap_n = os.cpu_count() or 1
    if requested is None:
        return cap_n
    return max(1, min(requested, cap_n))


def pmap(fn, items, workers: int | None = None):
    """Map ``fn`` over ``items`` preserving order, forking when it pays off."""
    items = list(items)
    n = resolve_workers(workers)
    if n <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    ctx = multiprocessing.get_context("fork")
    with ProcessPoolExecutor(max_workers=min(n, len(items)), mp_context=ctx) as pool:
        return list(pool.map(fn, items))
