"""Order-preserving map over independent tasks."""

import os
from concurrent.futures import ProcessPoolExecutor


def default_jobs():
    return os.cpu_count() or 1


def pmap(fn, items, jobs=1):
    """``[fn(x) for x in items]``, optionally spread over worker processes.

    Results come back in input order, so reductions over them do not depend on ``jobs``.
    """
    items = list(items)
    if not jobs or jobs <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as pool:
        return list(pool.map(fn, items))
