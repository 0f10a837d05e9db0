# -*- coding: utf-8 -*-
"""
KSTPP Toolkit - Parallel helpers
Order-preserving thread fan-out and a fixed-order reduction
"""

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, Sequence, TypeVar

import psutil

T = TypeVar("T")
R = TypeVar("R")


def thread_count() -> int:
    """Worker count: KSTPP_THREADS if set, else the number of logical cores"""
    value = os.environ.get("KSTPP_THREADS")
    if value:
        try:
            return max(1, int(value))
        except ValueError:
            pass
    return max(1, psutil.cpu_count(logical=True) or 1)


def parallel_map(fn: Callable[[T], R], items: Iterable[T], workers: Optional[int] = None) -> List[R]:
    """Apply ``fn`` to every item; results come back in input order"""
    items = list(items)
    workers = thread_count() if workers is None else workers
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


def pairwise_sum(values: Sequence):
    """Tree reduction with a fixed pairing so sums are reproducible bit for bit"""
    values = list(values)
    if not values:
        return 0.0
    while len(values) > 1:
        paired = [values[i] + values[i + 1] for i in range(0, len(values) - 1, 2)]
        if len(values) % 2:
            paired.append(values[-1])
        values = paired
    return values[0]
