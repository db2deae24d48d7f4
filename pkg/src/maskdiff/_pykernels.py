"""Pure numpy implementation of the Potts-chain conditional kernel."""
import numpy as np


def potts_conditional_logprobs(x, labels, log_powers, log_K):
    """Per-position ``log p(x_i | x_j : labels_j > labels_i)`` under a Potts chain.

    ``x`` is an (n, L) int64 token array, ``labels`` an (n, L) int32 array of
    reveal steps (a larger label is revealed earlier), ``log_powers[d]`` is
    ``log P^d``.  Only the nearest earlier-revealed neighbour on each side
    matters by the Markov property.  Returns an (n, L) float64 array.
    """
    x = np.ascontiguousarray(x, dtype=np.int64)
    labels = np.ascontiguousarray(labels, dtype=np.int32)
    n, L = x.shape
    out = np.empty((n, L))
    rows = np.arange(n)
    for i in range(L):
        li = labels[:, i : i + 1]
        xi = x[:, i]
        if i > 0:
            left = labels[:, :i] > li
            has_a = left.any(axis=1)
            a = i - 1 - np.argmax(left[:, ::-1], axis=1)
        else:
            has_a = np.zeros(n, dtype=bool)
            a = np.zeros(n, dtype=np.intp)
        if i < L - 1:
            right = labels[:, i + 1 :] > li
            has_b = right.any(axis=1)
            b = i + 1 + np.argmax(right, axis=1)
        else:
            has_b = np.zeros(n, dtype=bool)
            b = np.full(n, L - 1, dtype=np.intp)
        xa, xb = x[rows, a], x[rows, b]
        da = np.where(has_a, i - a, 1)
        db = np.where(has_b, b - i, 1)
        val = np.where(has_a, log_powers[da, xa, xi], 0.0)
        val += np.where(has_b, log_powers[db, xi, xb], 0.0)
        both = has_a & has_b
        val -= np.where(both, log_powers[np.where(both, b - a, 1), xa, xb], 0.0)
        val[~(has_a | has_b)] = -log_K
        out[:, i] = val
    return out
