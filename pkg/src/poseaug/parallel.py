"""Worker-count control.

``POSEAUG_THREADS`` caps per-process worker parallelism for embarrassingly
parallel loops (view construction, batched evaluation).  Results are always
collected in input order, so the thread count never changes any output.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

__all__ = ["worker_limit", "ordered_map"]


def worker_limit() -> int:
    raw = os.environ.get("POSEAUG_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def ordered_map(fn, items):
    """Map preserving input order; threaded only when the limit allows."""
    items = list(items)
    limit = worker_limit()
    if limit <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=limit) as pool:
        return list(pool.map(fn, items))
