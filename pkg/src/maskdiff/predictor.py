"""Factorised mask predictors and their training error.

A predictor maps a partially masked sequence to an independent categorical per
masked position.  The optimal predictor returns the true conditionals of its
oracle; the perturbed predictor mixes them with the uniform distribution,
``(1 - alpha) * p* + alpha / K``, which gives a training error of known sign
and controllable size without fitting anything.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import montecarlo
from .batch import conditional_logprobs
from .errors import ConfigError, InvalidArgument, TooLarge
from .oracle import Categorical, as_tabular
from .schedule import MASK, TRAJECTORY_GUARD, MaskSchedule

EXACT_WORK_GUARD = 5 * 10**7


@dataclass(frozen=True)
class MaskPredictor:
    oracle: object
    alpha: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise InvalidArgument(f"alpha must lie in [0, 1], got {self.alpha}")

    @property
    def kind(self) -> str:
        return "optimal" if self.alpha == 0 else "perturbed"

    @property
    def K(self) -> int:
        return self.oracle.K

    def perturb_log(self, log_p):
        """Map optimal log-probabilities of realised tokens to this predictor's."""
        if self.alpha == 0:
            return log_p
        with np.errstate(divide="ignore"):
            return np.logaddexp(np.log1p(-self.alpha) + log_p, math.log(self.alpha / self.K))

    def predict(self, y, positions=None) -> dict[int, Categorical]:
        y = np.asarray(y, dtype=np.int64)
        masked = np.flatnonzero(y == MASK)
        if masked.size == 0:
            raise InvalidArgument("predict needs at least one masked position")
        if positions is None:
            positions = masked
        out = {}
        for i in positions:
            i = int(i)
            cat = self.oracle.conditional_token(i, y)
            if self.alpha:
                cat = Categorical(self.perturb_log(cat.log_probs))
            out[i] = cat
        return out

    def spec(self) -> dict:
        if self.alpha == 0:
            return {"type": "optimal"}
        return {"type": "perturbed", "alpha": self.alpha}

    @classmethod
    def from_spec(cls, spec: dict, oracle) -> "MaskPredictor":
        kind = spec.get("type")
        if kind == "optimal":
            return cls(oracle)
        if kind == "perturbed":
            try:
                return cls(oracle, float(spec["alpha"]))
            except (KeyError, InvalidArgument) as exc:
                raise ConfigError(f"bad perturbed predictor spec {spec}: {exc}") from exc
        raise ConfigError(f"unknown predictor type {kind!r}")


def optimal(d) -> MaskPredictor:
    return MaskPredictor(d)


def perturbed(d, alpha: float) -> MaskPredictor:
    return MaskPredictor(d, alpha)


@dataclass(frozen=True)
class TrainingError:
    value: float
    method: str
    stderr: float = 0.0
    n_samples: int = 0


def training_error(p: MaskPredictor, d, schedule: MaskSchedule, mode="exact", n=None, rng=None, threads=1):
    """Likelihood gap between the optimal predictor for ``d`` and ``p``.

    Averages ``(L/|M|) * sum_{i in M} log(p*_i / p_i)(X_i | X outside M)`` over
    ``tau ~ s_t/L``, ``M`` uniform of size ``s_1 + ... + s_tau`` and ``X ~ d``.
    ``mode="exact"`` enumerates all three; ``mode="mc"`` draws ``n`` joint samples.
    """
    if mode == "exact":
        if not isinstance(schedule, MaskSchedule):
            raise InvalidArgument("exact training error needs a fixed schedule")
        return TrainingError(_training_error_exact(p, d, schedule), "exact")
    if mode != "mc":
        raise InvalidArgument(f"unknown mode {mode!r}")
    if n is None or n < 2:
        raise InvalidArgument("Monte-Carlo training error needs n >= 2")
    est = montecarlo.summarize(
        montecarlo.run_replicas(lambda g, m: _training_error_draw(p, d, schedule, g, m), n, rng, threads)
    )
    return TrainingError(est.mean, "monte-carlo", est.stderr, est.n)


def _training_error_exact(p: MaskPredictor, d, schedule: MaskSchedule) -> float:
    L = schedule.L
    if d.L != L:
        raise InvalidArgument(f"schedule length {L} does not match distribution length {d.L}")
    # grid cells touched: one full-table pass per (mask set, masked position)
    work = d.K**L * sum(math.comb(L, m) * m for m in schedule.cumulative)
    if work > EXACT_WORK_GUARD:
        raise TooLarge(f"exact training error needs ~{work:.3g} cell updates, guard is {EXACT_WORK_GUARD:.0e}")
    tab = as_tabular(d)
    ptab = as_tabular(p.oracle)
    total = 0.0
    for s, m in zip(schedule.sizes, schedule.cumulative):
        count = math.comb(L, m)
        if count > TRAJECTORY_GUARD:
            raise TooLarge(f"{count} mask sets of size {m} exceeds guard")
        acc = 0.0
        for M in itertools.combinations(range(L), m):
            W = [j for j in range(L) if j not in M]
            for i in M:
                keep = W + [i]
                weight = tab.log_marginal_grid(keep)
                with np.errstate(invalid="ignore"):
                    gap = tab.conditional_grid(i, W) - p.perturb_log(ptab.conditional_grid(i, W))
                    pw = np.exp(weight)
                    acc += float(np.sum(np.where(pw > 0, pw * gap, 0.0)))
        total += (s / L) * (L / m) * acc / count
    return total


def _training_error_draw(p: MaskPredictor, d, schedule, rng, m: int) -> np.ndarray:
    L = schedule.L
    if isinstance(schedule, MaskSchedule):
        sizes = np.asarray(schedule.sizes)
        tau = rng.choice(schedule.T, size=m, p=sizes / L)
        mask_size = np.asarray(schedule.cumulative)[tau]
    else:
        # randomised schedule: a fresh schedule per sample
        mask_size = np.empty(m, dtype=np.int64)
        for r in range(m):
            sch = schedule.draw(rng)
            mask_size[r] = sch.cumulative[rng.choice(sch.T, p=np.asarray(sch.sizes) / L)]
    # the first |M| entries of a random permutation form a uniform |M|-subset
    ranks = rng.permuted(np.tile(np.arange(L), (m, 1)), axis=1)
    masked = ranks < mask_size[:, None]
    labels = np.where(masked, 1, 2).astype(np.int32)
    x = d.sample(m, rng)
    star = conditional_logprobs(d, x, labels)
    hat = p.perturb_log(star if p.oracle is d else conditional_logprobs(p.oracle, x, labels))
    gap = np.where(masked, star - hat, 0.0).sum(axis=1)
    return (L / mask_size) * gap
