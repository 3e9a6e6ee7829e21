"""Ordered task-level parallel map, capped by ``LSJM_THREADS``."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor


def worker_count(requested: int | None = None) -> int:
    cap = os.environ.get("LSJM_THREADS")
    n = requested if requested is not None else (os.cpu_count() or 1)
    if cap:
        try:
            n = min(n, int(cap))
        except ValueError:
            pass
    return max(1, n)


def pmap(fn, items, workers: int = 1) -> list:
    """``[fn(x) for x in items]``, optionally in worker processes.

    Results come back in input order, so output never depends on scheduling.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as ex:
        return list(ex.map(fn, items))
