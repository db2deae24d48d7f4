"""Replica-parallel Monte-Carlo driver with deterministic aggregation.

A run of ``n`` samples is cut into fixed-size replicas.  Replica ``r`` draws
from ``SeedSequence(master_seed, spawn_key=(r,))``, i.e. a hash of the master
seed and the replica index, so the values (and their concatenation order) do
not depend on how many worker threads execute the replicas.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

REPLICA_SIZE = 20_000
SEED_MAX = 2**64 - 1


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    stderr: float
    n: int


def master_seed(rng) -> int:
    """Accept an int seed or a Generator (from which a 64-bit seed is drawn)."""
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(0, 2**63, dtype=np.int64))
    seed = int(rng)
    if not 0 <= seed <= SEED_MAX:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def replica_rng(seed: int, replica: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(replica,)))


def run_replicas(
    draw: Callable[[np.random.Generator, int], np.ndarray],
    n: int,
    seed,
    threads: int = 1,
    replica_size: int = REPLICA_SIZE,
) -> np.ndarray:
    """Call ``draw(rng, m)`` per replica and concatenate the per-sample values in replica order."""
    seed = master_seed(seed)
    sizes = [replica_size] * (n // replica_size)
    if n % replica_size:
        sizes.append(n % replica_size)
    rngs = [replica_rng(seed, r) for r in range(len(sizes))]
    if threads <= 1 or len(sizes) == 1:
        parts = [draw(g, m) for g, m in zip(rngs, sizes)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(draw, rngs, sizes))
    return np.concatenate(parts)


def summarize(values: np.ndarray) -> MCEstimate:
    n = values.shape[0]
    if n < 2:
        raise ValueError("need at least two samples for a standard error")
    return MCEstimate(float(values.mean()), float(values.std(ddof=1) / math.sqrt(n)), n)
