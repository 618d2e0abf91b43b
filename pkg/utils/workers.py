from __future__ import annotations

import logging
import os

from concurrent.futures import ProcessPoolExecutor
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from typing import Callable, TypeVar
    T = TypeVar('T')

logger = logging.getLogger(__name__)


def available_workers() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def map_indexed(func: Callable[[int], T], count: int, workers: int = 1) -> list[T]:
    """Evaluates ``func(i)`` for i in range(count) and returns results in index order.

    With more than one worker the indices are handed out in chunks to a
    process pool; ``func`` must then be picklable (a module level function or
    a functools.partial of one)."""
    if workers <= 1 or count <= 1:
        return [func(i) for i in range(count)]
    workers = min(workers, count)
    chunksize = max(1, count // (workers * 4))
    logger.debug('Running %s tasks on %s workers (chunksize %s)', count, workers, chunksize)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, range(count), chunksize=chunksize))
