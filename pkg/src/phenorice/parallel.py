"""Row-block tiling over a thread pool.

Every operation routed through here is per-pixel or uses an explicit halo,
so the output does not depend on the number of blocks or workers.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

THREADS_ENV = "PHENORICE_THREADS"


def worker_count(default: int | None = None) -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    return default or min(os.cpu_count() or 1, 8)


def row_blocks(height: int, n_blocks: int) -> list[tuple[int, int]]:
    n_blocks = max(1, min(n_blocks, height))
    edges = [round(i * height / n_blocks) for i in range(n_blocks + 1)]
    return [(a, b) for a, b in zip(edges, edges[1:]) if b > a]


def run_blocks(fn, height: int, threads: int | None = None, n_blocks: int | None = None):
    """Call ``fn(start, stop)`` for each row block; returns results in block order."""
    threads = threads or worker_count()
    blocks = row_blocks(height, n_blocks or threads)
    if threads == 1 or len(blocks) == 1:
        return [fn(a, b) for a, b in blocks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda ab: fn(*ab), blocks))
