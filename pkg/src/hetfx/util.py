"""Seed derivation and worker-pool helpers.

All randomness in the package flows from a single master seed through named,
indexed streams. A stream is identified by (master seed, label, indices...),
so any unit of work (a tree, a bootstrap replicate, a Monte Carlo repetition)
can be recomputed in isolation and the result never depends on how work is
scheduled across processes.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
from typing import Callable, Iterable, Sequence

import numpy as np

_U32 = 0xFFFFFFFF


def seed_sequence(master: int, label: str, *indices: int) -> np.random.SeedSequence:
    """Derive a named SeedSequence from the master seed.

    Args:
        master: master seed for the whole run.
        label: component name, hashed into the entropy pool so that streams
            for different components never collide.
        indices: work-item indices (tree number, replicate number, ...).

    Returns:
        A ``np.random.SeedSequence`` unique to (master, label, indices).
    """
    digest = hashlib.blake2s(label.encode("utf8"), digest_size=8).digest()
    words = [
        int.from_bytes(digest[:4], "little"),
        int.from_bytes(digest[4:], "little"),
    ]
    master = int(master)
    # split wide seeds into 32-bit words so no entropy is discarded
    entropy = [master & _U32, (master >> 32) & _U32, *words]
    for i in indices:
        i = int(i)
        entropy.extend([i & _U32, (i >> 32) & _U32])
    return np.random.SeedSequence(entropy)


def stream_rng(master: int, label: str, *indices: int) -> np.random.Generator:
    """Generator for the named stream; see :func:`seed_sequence`."""
    return np.random.Generator(np.random.PCG64(seed_sequence(master, label, *indices)))


def parallel_map(
    fn: Callable,
    items: Sequence,
    workers: int = 1,
    chunk_size: int | None = None,
) -> list:
    """Map ``fn`` over ``items``, optionally across worker processes.

    Results come back in input order whatever the worker count, so output is
    identical for workers=1 and workers=N as long as ``fn`` itself only uses
    per-item seeds. ``fn`` and items must be picklable when workers > 1.
    """
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    if chunk_size is None:
        chunk_size = max(1, len(items) // (workers * 4))
    with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=chunk_size))


def format_float(x: float) -> str:
    """Shortest round-trip decimal form, stable across runs and platforms."""
    if np.isnan(x):
        return "nan"
    return repr(float(x))
