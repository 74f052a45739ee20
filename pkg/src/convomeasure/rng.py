"""Deterministic, counter-based random streams.

Every draw is addressed by ``(seed, stream_id, role, chunk)``. A chunk holds at
most ``CHUNK_SIZE`` draws and owns its own Philox generator, so a batch can be
split over any number of workers and reassembled bit-identically.
"""
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .config import CHUNK_SIZE


def chunk_generator(seed, stream_id, role, chunk):
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=(int(stream_id), int(role), int(chunk)))
    return np.random.Generator(np.random.Philox(ss))


def chunk_bounds(n, chunk_size=CHUNK_SIZE):
    return [(start, min(start + chunk_size, n)) for start in range(0, n, chunk_size)]


def standard_normal(n, dim, seed, stream_id=0, role=0, workers=1):
    """Draw an ``(n, dim)`` array of standard normals from the addressed stream."""
    bounds = chunk_bounds(n)

    def fill(idx):
        start, stop = bounds[idx]
        return chunk_generator(seed, stream_id, role, idx).standard_normal((stop - start, dim))

    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(fill, range(len(bounds))))
    else:
        parts = [fill(i) for i in range(len(bounds))]
    if not parts:
        return np.empty((0, dim))
    return np.concatenate(parts, axis=0)
