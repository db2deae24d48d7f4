"""Vectorised conditional log-probabilities for batches of (sequence, trajectory) pairs."""
from __future__ import annotations

import numpy as np

from .kernels import potts_conditional_logprobs
from .oracle import PottsChain, TabularDistribution

_CHUNK = 16_384


def conditional_logprobs(d, x: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """``out[r, i] = log p(x[r, i] | x[r, j] for j with labels[r, j] > labels[r, i])``.

    ``labels`` encodes reveal order: a position is conditioned on every
    position with a strictly larger label, so trajectory labels give the
    sampler's per-step contexts and a 1/2 labelling gives "masked given
    unmasked".
    """
    x = np.ascontiguousarray(x, dtype=np.int64)
    labels = np.ascontiguousarray(labels, dtype=np.int32)
    if isinstance(d, PottsChain):
        parts = [
            potts_conditional_logprobs(
                x[k : k + _CHUNK], labels[k : k + _CHUNK], d.log_powers, float(np.log(d.K))
            )
            for k in range(0, x.shape[0], _CHUNK)
        ]
        return np.concatenate(parts) if parts else np.empty(x.shape)
    if isinstance(d, TabularDistribution):
        return _tabular_conditional_logprobs(d, x, labels)
    raise TypeError(f"unsupported distribution {type(d).__name__}")


def _tabular_conditional_logprobs(d: TabularDistribution, x, labels) -> np.ndarray:
    n, L = x.shape
    out = np.empty((n, L))
    full = (d.K,) * L
    grids: dict[tuple, np.ndarray] = {}
    uniq, inverse = np.unique(labels, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    for u, lab in enumerate(uniq):
        rows = np.flatnonzero(inverse == u)
        idx = tuple(x[rows].T)
        for i in range(L):
            W = tuple(np.flatnonzero(lab > lab[i]).tolist())
            key = (i, W)
            grid = grids.get(key)
            if grid is None:
                grid = grids[key] = np.broadcast_to(d.conditional_grid(i, W), full)
            out[rows, i] = grid[idx]
    return out
