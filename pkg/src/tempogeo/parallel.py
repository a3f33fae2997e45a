"""Chunked ensemble execution whose results never depend on the worker count."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence

import numpy as np


def default_workers() -> int:
    return os.cpu_count() or 1


def chunks(ids: np.ndarray, size: int) -> list[np.ndarray]:
    """Fixed-size consecutive slices of the path ids."""
    ids = np.asarray(ids)
    return [ids[i : i + size] for i in range(0, ids.size, size)]


def map_chunks(fn: Callable, ids: Sequence[int], size: int, workers: int = 1) -> list:
    """Apply ``fn`` to each chunk of ids; results come back in chunk order.

    Chunk boundaries depend only on ``size``, so any worker count gives the
    same per-chunk results and the same reduction order.
    """
    parts = chunks(np.asarray(ids), size)
    if workers <= 1 or len(parts) <= 1:
        return [fn(c) for c in parts]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, parts))
