"""Deterministic reductions and chunked evaluation helpers."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np

_BLOCK = 256


def stable_sum(values: np.ndarray) -> float:
    """Sum a 1-D array in fixed index order with compensated accumulation.

    Values are summed in blocks of 256 (numpy pairwise) and the block totals
    are combined with ``math.fsum``.  The result depends only on the input
    values, never on how they were produced, so it is bit-reproducible
    regardless of the thread count used upstream.
    """
    v = np.asarray(values, dtype=float).ravel()
    if v.size <= _BLOCK:
        return math.fsum(v.tolist())
    pad = (-v.size) % _BLOCK
    if pad:
        v = np.concatenate([v, np.zeros(pad)])
    return math.fsum(v.reshape(-1, _BLOCK).sum(axis=1).tolist())


def stable_sum_rows(values: np.ndarray) -> np.ndarray:
    """Column-wise :func:`stable_sum` of an ``(n, G)`` array, reducing over G."""
    values = np.asarray(values, dtype=float)
    return np.array([stable_sum(row) for row in values])


def chunk_bounds(size: int, threads: int) -> list[tuple[int, int]]:
    threads = max(1, min(int(threads), size)) if size else 1
    edges = np.linspace(0, size, threads + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


def chunked_map(fn, size: int, threads: int = 1) -> list:
    """Apply ``fn(lo, hi)`` over contiguous index chunks, preserving order."""
    bounds = chunk_bounds(size, threads)
    if len(bounds) == 1:
        return [fn(*bounds[0])]
    with ThreadPoolExecutor(max_workers=len(bounds)) as pool:
        return list(pool.map(lambda b: fn(*b), bounds))
