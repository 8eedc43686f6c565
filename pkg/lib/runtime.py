"""
Thread budget, ordered parallel map and per-item random streams.

The thread budget is process-wide: the CLI sets it once from ``--threads``
(or ``THZLAB_THREADS``) and library code reads it through ``threads()``
when it hands work to a pool or to ``scipy.fft``.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, Sequence, TypeVar

import numpy as np
from tqdm import tqdm

LOGGER = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

_threads = 1
_progress = True


def configure(threads: int = 1, progress: bool = True) -> None:
    global _threads, _progress
    if threads < 1:
        raise ValueError(f"thread count must be >= 1, got {threads}")
    _threads = threads
    _progress = progress
    LOGGER.debug("Runtime configured: threads=%d progress=%s", threads, progress)


def threads() -> int:
    return _threads


def progress_enabled() -> bool:
    return _progress


def parallel_map(
    fn: Callable[[T], R],
    items: Sequence[T],
    workers: Optional[int] = None,
    desc: Optional[str] = None,
) -> List[R]:
    """Apply ``fn`` to every item and return results in input order.

    With one worker the map runs inline; otherwise a thread pool is used and
    results are merged by index, so output never depends on scheduling.
    """
    count = workers if workers is not None else _threads
    show = _progress and desc is not None
    if count <= 1 or len(items) <= 1:
        return [fn(item) for item in tqdm(items, desc=desc, disable=not show, leave=False)]

    with ThreadPoolExecutor(max_workers=count) as pool:
        mapped: Iterable[R] = pool.map(fn, items)
        return list(tqdm(mapped, total=len(items), desc=desc, disable=not show, leave=False))


def item_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for the work item addressed by ``key``.

    Streams derive from ``SeedSequence(seed, spawn_key=key)`` so the numbers a
    pixel sees depend only on (seed, key), never on evaluation order.
    """
    sequence = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(sequence))
