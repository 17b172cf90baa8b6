"""Deterministic fan-out of independent Monte-Carlo work items.

Results are gathered by item index, never by arrival order, so a run at any
worker count reduces identically to the serial one (each draw owns its RNG
substream).  Worker processes clamp their BLAS pools to one thread to avoid
oversubscription.
"""

from __future__ import annotations

import multiprocessing as mp
import os

__all__ = ["resolve_workers", "indexed_map"]

_WORKER_FN = None


def resolve_workers(workers=None, cap=None) -> int:
    """Worker count: explicit arg, else GLUEKIT_THREADS, else physical cores."""
    if workers is None:
        env = os.environ.get("GLUEKIT_THREADS")
        if env is not None:
            workers = int(env)
        else:
            workers = os.cpu_count() or 1
    workers = max(1, int(workers))
    if cap is not None:
        workers = min(workers, int(cap))
    return workers


def _init_worker(fn):
    global _WORKER_FN
    _WORKER_FN = fn
    try:
        from threadpoolctl import threadpool_limits

        threadpool_limits(1)
    except Exception:
        pass


def _call_worker(item):
    return _WORKER_FN(item)


def indexed_map(fn, items, workers: int = 1) -> list:
    """Map fn over items, preserving order; fn/items must be picklable when workers > 1."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    n_proc = min(workers, len(items))
    chunk = max(1, len(items) // (4 * n_proc))
    ctx = mp.get_context("fork") if hasattr(os, "fork") else mp.get_context("spawn")
    with ctx.Pool(n_proc, initializer=_init_worker, initargs=(fn,)) as pool:
        return pool.map(_call_worker, items, chunksize=chunk)
