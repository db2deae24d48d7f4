"""Exact probability oracles over token sequences.

Two families are provided:

* :class:`TabularDistribution` stores the full joint over ``K**L`` sequences in
  log space and answers every query by marginalisation.  It is the brute-force
  reference for small instances.
* :class:`PottsChain` is the K-state Potts Markov chain with coupling ``J``.
  Its transition matrix is doubly stochastic, so every marginal is uniform and
  conditionals depend only on the nearest observed neighbours.

All quantities are in nats.
"""
from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy.special import entr, gammaln, logsumexp

from .errors import InvalidArgument, TooLarge, ZeroProbabilityContext
from .schedule import MASK

TABLE_GUARD = 10**7
SUBSET_GUARD = 10**5
DEFAULT_MC_SUBSETS = 2000


def _lse1(log_w: np.ndarray) -> float:
    # scipy's logsumexp carries heavy per-call overhead on K-vectors
    m = log_w.max()
    if not np.isfinite(m):
        return float(m)
    return float(m + np.log(np.exp(log_w - m).sum()))


@dataclass(frozen=True)
class Categorical:
    """Distribution over ``[K]`` held as log-probabilities."""

    log_probs: np.ndarray

    @classmethod
    def from_log_weights(cls, log_w) -> "Categorical":
        log_w = np.asarray(log_w, dtype=np.float64)
        return cls(log_w - _lse1(log_w))

    @classmethod
    def uniform(cls, K: int) -> "Categorical":
        return cls(np.full(K, -math.log(K)))

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)

    @property
    def K(self) -> int:
        return self.log_probs.shape[0]

    def entropy(self) -> float:
        return float(entr(self.probs).sum())

    def sample(self, rng: np.random.Generator) -> int:
        return int(rng.choice(self.K, p=self.probs))


def _check_K_L(K: int, L: int) -> None:
    if K < 2:
        raise InvalidArgument(f"vocabulary size must be >= 2, got {K}")
    if L < 1:
        raise InvalidArgument(f"sequence length must be >= 1, got {L}")


def _observed(observed) -> tuple[np.ndarray, np.ndarray]:
    observed = np.asarray(observed, dtype=np.int64)
    W = np.flatnonzero(observed != MASK)
    return W, observed[W]


def _masked_mean_log(weights_log: np.ndarray, values: np.ndarray) -> float:
    """sum(exp(weights_log) * values) ignoring zero-weight entries."""
    p = np.exp(weights_log)
    return float(np.sum(np.where(p > 0, p * values, 0.0)))


class TabularDistribution:
    """Explicit joint distribution over ``[K]**L``.

    ``log_table`` has shape ``(K,) * L``; entry ``x`` is ``log p(x)``.
    """

    def __init__(self, log_table: np.ndarray):
        log_table = np.asarray(log_table, dtype=np.float64)
        self.L = log_table.ndim
        self.K = log_table.shape[0] if self.L else 0
        _check_K_L(self.K, self.L)
        if any(k != self.K for k in log_table.shape):
            raise InvalidArgument(f"table shape {log_table.shape} is not (K,)*L")
        if self.K**self.L > TABLE_GUARD:
            raise TooLarge(f"K**L = {self.K ** self.L} exceeds guard {TABLE_GUARD}")
        total = logsumexp(log_table)
        if not abs(math.expm1(total)) < 1e-12:
            raise InvalidArgument(f"table mass sums to {math.exp(total)!r}, expected 1")
        self.log_table = log_table
        self.log_table.setflags(write=False)
        self._marginals: dict[tuple[int, ...], np.ndarray] = {}

    # -- constructors -------------------------------------------------------

    @classmethod
    def from_probs(cls, probs) -> "TabularDistribution":
        probs = np.asarray(probs, dtype=np.float64)
        if np.any(probs < 0):
            raise InvalidArgument("negative probability mass")
        with np.errstate(divide="ignore"):
            return cls(np.log(probs / probs.sum()))

    @classmethod
    def random(cls, K: int, L: int, rng: np.random.Generator, concentration: float = 1.0):
        """Dirichlet(concentration) draw over all ``K**L`` sequences."""
        _check_K_L(K, L)
        probs = rng.dirichlet(np.full(K**L, concentration)).reshape((K,) * L)
        return cls.from_probs(probs)

    @classmethod
    def product(cls, marginals) -> "TabularDistribution":
        marginals = [np.asarray(m, dtype=np.float64) for m in marginals]
        table = marginals[0]
        for m in marginals[1:]:
            table = np.multiply.outer(table, m)
        return cls.from_probs(table)

    @classmethod
    def from_rows(cls, rows: Iterable, K: int, L: int) -> "TabularDistribution":
        """Build from ``(token list, probability)`` rows; unlisted sequences get mass 0."""
        _check_K_L(K, L)
        probs = np.zeros((K,) * L)
        for tokens, p in rows:
            tokens = tuple(int(t) for t in tokens)
            if len(tokens) != L or any(not 0 <= t < K for t in tokens):
                raise InvalidArgument(f"row {tokens} is not a length-{L} sequence over [{K}]")
            probs[tokens] += float(p)
        if abs(probs.sum() - 1.0) > 1e-9:
            raise InvalidArgument(f"row probabilities sum to {probs.sum()!r}")
        return cls.from_probs(probs)

    @classmethod
    def load(cls, path) -> "TabularDistribution":
        """Read a JSON (``{"K":..,"L":..,"rows":[[tokens, p], ...]}``) or CSV table.

        CSV rows are ``x_0,...,x_{L-1},probability``; a header line is allowed.
        ``K`` for CSV files is one plus the largest token seen.
        """
        path = Path(path)
        if path.suffix.lower() == ".json":
            data = json.loads(path.read_text())
            rows = data["rows"]
            L = int(data.get("L", len(rows[0][0])))
            K = int(data.get("K", 1 + max(max(r[0]) for r in rows)))
            return cls.from_rows(rows, K, L)
        rows = []
        with path.open(newline="") as fh:
            for rec in csv.reader(fh):
                if not rec or rec[0].strip().startswith("#"):
                    continue
                try:
                    vals = [int(v) for v in rec[:-1]]
                except ValueError:
                    continue  # header
                rows.append((vals, float(rec[-1])))
        if not rows:
            raise InvalidArgument(f"no rows in {path}")
        L = len(rows[0][0])
        K = max(2, 1 + max(max(r[0]) for r in rows))
        return cls.from_rows(rows, K, L)

    def to_rows(self) -> list[tuple[list[int], float]]:
        p = self.probs
        return [
            (list(x), float(p[x]))
            for x in itertools.product(range(self.K), repeat=self.L)
            if p[x] > 0
        ]

    # -- basic queries ------------------------------------------------------

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_table)

    def log_prob(self, x) -> float | np.ndarray:
        x = np.asarray(x, dtype=np.int64)
        return self.log_table[tuple(np.moveaxis(x, -1, 0))]

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        flat = rng.choice(self.K**self.L, size=n, p=self.probs.ravel())
        return np.stack(np.unravel_index(flat, (self.K,) * self.L), axis=-1).astype(np.int64)

    def log_marginal(self, keep: Iterable[int]) -> np.ndarray:
        """Compact log-marginal over ``sorted(keep)``; axis order follows the sort."""
        keep = tuple(sorted(set(int(i) for i in keep)))
        out = self._marginals.get(keep)
        if out is None:
            drop = tuple(ax for ax in range(self.L) if ax not in keep)
            out = logsumexp(self.log_table, axis=drop) if drop else self.log_table
            out = np.asarray(out)
            self._marginals[keep] = out
        return out

    def log_marginal_grid(self, keep: Iterable[int]) -> np.ndarray:
        """Log-marginal broadcastable against the full ``(K,)*L`` grid."""
        keep = tuple(sorted(set(int(i) for i in keep)))
        shape = [self.K if ax in keep else 1 for ax in range(self.L)]
        return self.log_marginal(keep).reshape(shape)

    def conditional_grid(self, i: int, W: Iterable[int]) -> np.ndarray:
        """``log p(x_i | x_W)`` broadcastable against the full grid.

        Entries whose context has probability zero are NaN.
        """
        W = set(int(w) for w in W)
        if i in W:
            raise InvalidArgument(f"position {i} is observed")
        with np.errstate(invalid="ignore"):
            return self.log_marginal_grid(W | {i}) - self.log_marginal_grid(W)

    def conditional_token(self, i: int, observed) -> Categorical:
        W, vals = _observed(observed)
        if observed[i] != MASK:
            raise InvalidArgument(f"position {i} is not masked")
        keep = sorted(set(W.tolist()) | {i})
        lm = self.log_marginal(keep)
        index = tuple(slice(None) if ax == i else int(observed[ax]) for ax in keep)
        log_w = lm[index]
        if not np.isfinite(_lse1(log_w)):
            raise ZeroProbabilityContext(f"context {np.asarray(observed).tolist()} has zero probability")
        return Categorical.from_log_weights(log_w)

    # -- information quantities -------------------------------------------

    def entropy(self, keep: Iterable[int]) -> float:
        return float(entr(np.exp(self.log_marginal(keep))).sum())

    def mi_token_subset(self, i: int, W: Iterable[int]) -> float:
        """I(X_i ; X_W) by table marginalisation."""
        W = sorted(set(int(w) for w in W))
        if i in W:
            raise InvalidArgument(f"position {i} must not be in the conditioning set")
        if not W:
            return 0.0
        return self.entropy([i]) + self.entropy(W) - self.entropy(W + [i])

    def mi_token_rest(self, i: int) -> float:
        return self.mi_token_subset(i, [j for j in range(self.L) if j != i])

    def expected_mi_random_subset(self, i, subset_size, n_subsets=None, rng=None) -> float:
        others = [j for j in range(self.L) if j != i]
        return _subset_average(
            lambda W: self.mi_token_subset(i, W), others, subset_size, n_subsets, rng
        )


def _subset_average(fn, others, size, n_subsets, rng) -> float:
    """Average ``fn(W)`` over uniformly random ``size``-subsets of ``others``.

    Exact enumeration when ``n_subsets`` is None and the subset count is under
    :data:`SUBSET_GUARD`; otherwise ``n_subsets`` (default 2000) Monte-Carlo draws.
    """
    if not 0 <= size <= len(others):
        raise InvalidArgument(f"subset size {size} out of range [0, {len(others)}]")
    count = math.comb(len(others), size)
    if n_subsets is None and count <= SUBSET_GUARD:
        return float(np.mean([fn(W) for W in itertools.combinations(others, size)]))
    n_subsets = n_subsets or DEFAULT_MC_SUBSETS
    if rng is None:
        raise InvalidArgument("Monte-Carlo subset averaging needs an rng")
    others = np.asarray(others)
    return float(np.mean([fn(rng.choice(others, size, replace=False)) for _ in range(n_subsets)]))


class PottsChain:
    """K-state Potts chain of length L with coupling J.

    ``X_0 ~ Unif([K])`` and ``P(X_i = y | X_{i-1} = x) = exp(J [x == y]) / (exp(J) + K - 1)``.
    Matrix powers ``P^d`` for ``d < L`` are computed once at construction.
    """

    def __init__(self, K: int, L: int, J: float):
        _check_K_L(K, L)
        self.K, self.L, self.J = int(K), int(L), float(J)
        eJ = math.exp(self.J)
        P = np.full((K, K), 1.0 / (eJ + K - 1))
        np.fill_diagonal(P, eJ / (eJ + K - 1))
        self.transition = P
        powers = np.empty((max(L, 2), K, K))
        powers[0] = np.eye(K)
        for d in range(1, powers.shape[0]):
            powers[d] = powers[d - 1] @ P
        self.powers = powers
        with np.errstate(divide="ignore"):
            self.log_powers = np.log(powers)
        for arr in (self.transition, self.powers, self.log_powers):
            arr.setflags(write=False)

    def __repr__(self):
        return f"PottsChain(K={self.K}, L={self.L}, J={self.J!r})"

    @property
    def stay_probability(self) -> float:
        return float(self.transition[0, 0])

    def log_prob(self, x) -> float | np.ndarray:
        x = np.asarray(x, dtype=np.int64)
        logP = self.log_powers[1]
        steps = logP[x[..., :-1], x[..., 1:]].sum(axis=-1)
        return -math.log(self.K) + steps

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        x = np.empty((n, self.L), dtype=np.int64)
        x[:, 0] = rng.integers(self.K, size=n)
        q = self.stay_probability
        for i in range(1, self.L):
            prev = x[:, i - 1]
            stay = rng.random(n) < q
            other = rng.integers(self.K - 1, size=n)
            other += other >= prev
            x[:, i] = np.where(stay, prev, other)
        return x

    @staticmethod
    def neighbours(i: int, W) -> tuple[int | None, int | None]:
        """Nearest members of ``W`` strictly left and right of ``i``."""
        W = np.asarray(list(W), dtype=np.int64)
        left, right = W[W < i], W[W > i]
        return (int(left.max()) if left.size else None, int(right.min()) if right.size else None)

    def _cond_log_weights(self, i, a, xa, b, xb) -> np.ndarray:
        log_w = np.zeros(self.K)
        if a is not None:
            log_w = log_w + self.log_powers[i - a][xa, :]
        if b is not None:
            log_w = log_w + self.log_powers[b - i][:, xb]
        return log_w

    def conditional_token(self, i: int, observed) -> Categorical:
        observed = np.asarray(observed, dtype=np.int64)
        if observed[i] != MASK:
            raise InvalidArgument(f"position {i} is not masked")
        W, _ = _observed(observed)
        a, b = self.neighbours(i, W)
        if a is None and b is None:
            return Categorical.uniform(self.K)
        xa = observed[a] if a is not None else None
        xb = observed[b] if b is not None else None
        return Categorical.from_log_weights(self._cond_log_weights(i, a, xa, b, xb))

    # -- mutual information via the Markov property ------------------------

    @cached_property
    def gap_mi_table(self) -> np.ndarray:
        """``I(X_i ; X_{i-g}, X_{i+h})``; a zero gap means that side is unobserved."""
        K, L = self.K, self.L
        P = self.powers
        logK = math.log(K)
        tab = np.zeros((L, L))
        for g in range(1, L):
            h_joint = float(entr(P[g] / K).sum())
            tab[g, 0] = tab[0, g] = logK - (h_joint - logK)
        for g in range(1, L - 1):
            hs = np.arange(1, L - g)
            joint = P[g][None, :, :, None] * P[hs][:, None, :, :] / K
            h_axb = entr(joint).sum(axis=(1, 2, 3))
            h_ab = entr(P[g + hs] / K).sum(axis=(1, 2))
            tab[g, hs] = logK - (h_axb - h_ab)
        return tab

    def _gap(self, i: int, W) -> tuple[int, int]:
        a, b = self.neighbours(i, W)
        return (0 if a is None else i - a, 0 if b is None else b - i)

    def mi_token_subset(self, i: int, W) -> float:
        W = [int(w) for w in W]
        if i in W:
            raise InvalidArgument(f"position {i} must not be in the conditioning set")
        g, h = self._gap(i, W)
        return float(self.gap_mi_table[g, h])

    def mi_token_rest(self, i: int) -> float:
        return float(self.gap_mi_table[1 if i > 0 else 0, 1 if i < self.L - 1 else 0])

    def gap_distribution(self, i: int, subset_size: int) -> np.ndarray:
        """Law of (left gap, right gap) to ``i`` for a uniform random subset of the other positions."""
        L, m = self.L, subset_size
        if not 0 <= m <= L - 1:
            raise InvalidArgument(f"subset size {m} out of range [0, {L - 1}]")
        A, B = i, L - 1 - i

        def log_comb(n, k):
            n, k = np.asarray(n, float), np.asarray(k, float)
            ok = (k >= 0) & (k <= n)
            with np.errstate(invalid="ignore"):
                val = gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)
            return np.where(ok, val, -np.inf)

        log_total = float(log_comb(L - 1, m))
        out = np.zeros((L, L))
        g = np.arange(1, A + 1)[:, None]
        h = np.arange(1, B + 1)[None, :]
        if A and B:
            out[1 : A + 1, 1 : B + 1] = np.exp(log_comb(L - 1 - g - h, m - 2) - log_total)
        if A:
            out[1 : A + 1, 0] = np.exp(log_comb(A - g[:, 0], m - 1) - log_total)
        if B:
            out[0, 1 : B + 1] = np.exp(log_comb(B - h[0], m - 1) - log_total)
        out[0, 0] = 1.0 if m == 0 else 0.0
        return out

    def expected_mi_random_subset(self, i, subset_size, n_subsets=None, rng=None) -> float:
        """E over uniform ``subset_size``-subsets W of the other positions of I(X_i; X_W).

        Exact by default, through the law of the nearest-neighbour gaps;
        an integer ``n_subsets`` switches to Monte Carlo.
        """
        if n_subsets is None:
            dist = self.gap_distribution(i, subset_size)
            return float(np.sum(dist * self.gap_mi_table))
        others = [j for j in range(self.L) if j != i]
        return _subset_average(
            lambda W: self.mi_token_subset(i, W), others, subset_size, n_subsets, rng
        )

    # -- brute-force bridge ------------------------------------------------

    @cached_property
    def tabular(self) -> TabularDistribution:
        if self.K**self.L > TABLE_GUARD:
            raise TooLarge(f"K**L = {self.K ** self.L} exceeds guard {TABLE_GUARD}")
        logP = self.log_powers[1]
        table = np.full(self.K, -math.log(self.K))
        for _ in range(1, self.L):
            table = table[..., :, None] + logP
        return TabularDistribution(table)

    def to_tabular(self) -> TabularDistribution:
        return self.tabular


def as_tabular(d) -> TabularDistribution:
    return d if isinstance(d, TabularDistribution) else d.to_tabular()
