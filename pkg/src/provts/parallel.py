"""Worker-count resolution and an order-preserving parallel map."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")

ENV_VAR = "PROVTS_JOBS"


def resolve_jobs(jobs: int | None = None) -> int:
    """Explicit value, else $PROVTS_JOBS, else the logical core count."""
    if jobs is None:
        env = os.environ.get(ENV_VAR)
        if env:
            try:
                jobs = int(env)
            except ValueError:
                jobs = None
    if jobs is None:
        jobs = os.cpu_count() or 1
    return max(1, int(jobs))


def pmap(fn: Callable[[T], R], items: Sequence[T], jobs: int | None = None) -> list[R]:
    """Map ``fn`` over ``items`` on a thread pool; results keep input order.

    Hot kernels release the GIL (numba ``nogil``), so threads scale.
    """
    n = resolve_jobs(jobs)
    if n == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(n, len(items))) as ex:
        return list(ex.map(fn, items))
