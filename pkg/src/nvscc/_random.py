"""Seed derivation and chunked shot sampling.

Shots are grouped into fixed-size chunks. Each chunk draws from its own
generator seeded by ``(master_seed, chunk_index)`` through numpy's
``SeedSequence`` hash, so results do not depend on how many workers run
the chunks or in which order they finish.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable

import numpy as np

CHUNK_SIZE = 1 << 14
THREADS_ENV = "NV_SCC_THREADS"


def derive_rng(master_seed: int, index: int) -> np.random.Generator:
    """Generator for stream ``index`` of ``master_seed``."""
    return np.random.default_rng([int(master_seed) & 0xFFFFFFFFFFFFFFFF, int(index)])


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV, "")
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(1, n)


def map_chunks(
    n_shots: int,
    master_seed: int,
    sample: Callable[[int, np.random.Generator], dict[str, np.ndarray]],
) -> dict[str, np.ndarray]:
    """Run ``sample(size, rng)`` over chunks and concatenate the arrays.

    ``sample`` must return a dict of 1-d arrays of length ``size``.
    """
    if n_shots <= 0:
        raise ValueError("n_shots must be positive")
    sizes = [CHUNK_SIZE] * (n_shots // CHUNK_SIZE)
    if n_shots % CHUNK_SIZE:
        sizes.append(n_shots % CHUNK_SIZE)

    def run(i: int) -> dict[str, np.ndarray]:
        return sample(sizes[i], derive_rng(master_seed, i))

    workers = min(thread_count(), len(sizes))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, range(len(sizes))))
    else:
        parts = [run(i) for i in range(len(sizes))]
    return {key: np.concatenate([p[key] for p in parts]) for key in parts[0]}
