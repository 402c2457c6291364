"""Worker pool used by sweeps and scene decoding.

Work items carry their own RNG keys, so results do not depend on the number of
workers or the order in which they complete.
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor

logger = logging.getLogger(__name__)

THREADS_ENV = "SPC_THREADS"


def resolve_threads(threads=None) -> int:
    """Number of worker threads; falls back to $SPC_THREADS, then 1."""
    if threads is None:
        env_value = os.environ.get(THREADS_ENV)
        if env_value is not None and env_value.strip():
            try:
                threads = int(env_value)
            except ValueError:
                raise ValueError(f"{THREADS_ENV} must be an integer, got {env_value!r}.")
    if threads is None:
        return 1
    if threads < 1:
        raise ValueError(f"Number of threads must be at least 1, got {threads}.")
    return threads


def parallel_map(func, items, threads=None) -> list:
    """Apply `func` to every item, returning results in input order."""
    threads = resolve_threads(threads)
    items = list(items)
    if threads == 1 or len(items) <= 1:
        return [func(item) for item in items]
    logger.debug(f"Mapping {len(items)} work items over {threads} threads.")
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, items))
