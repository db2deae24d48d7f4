"""Reverse (unmasking) process driven by a factorised mask predictor."""
from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass

import numpy as np
from scipy.special import entr

from .errors import InvalidArgument
from .oracle import PottsChain
from .predictor import MaskPredictor
from .schedule import MASK, MaskSchedule, MaskTrajectory, project

# entropies closer than this are treated as tied (then ordered by position)
ENTROPY_TIE_DECIMALS = 12
_ADAPTIVE_CHUNK = 2048


class UnmaskPolicy(str, enum.Enum):
    UNIFORM = "uniform"
    ENTROPY_ADAPTIVE = "entropy-adaptive"


@dataclass(frozen=True)
class SampleRun:
    """One sampler run.

    ``per_step_log_probs[t - 1]`` is the predictor log-probability of the
    tokens drawn at reverse step ``t``; the sum is the output's log-probability
    given the realised trajectory.
    """

    output: np.ndarray
    trajectory: MaskTrajectory
    per_step_log_probs: np.ndarray

    def log_csv(self) -> str:
        """Per-step run log: ``t, revealed positions, step log-prob`` in execution order."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "revealed", "step_log_prob"])
        for t in range(self.trajectory.T, 0, -1):
            revealed = " ".join(str(i) for i in self.trajectory.revealed(t))
            w.writerow([t, revealed, f"{self.per_step_log_probs[t - 1]:.12g}"])
        return buf.getvalue()


def adaptive_trajectory_step(p: MaskPredictor, y, s_t: int) -> tuple[int, ...]:
    """The ``s_t`` masked positions whose predictive entropy is lowest, ties by index."""
    y = np.asarray(y, dtype=np.int64)
    masked = np.flatnonzero(y == MASK)
    if masked.size < s_t:
        raise InvalidArgument(f"only {masked.size} masked positions, cannot reveal {s_t}")
    cats = p.predict(y, masked)
    h = np.round([cats[int(i)].entropy() for i in masked], ENTROPY_TIE_DECIMALS)
    order = np.lexsort((masked, h))
    return tuple(sorted(int(i) for i in masked[order[:s_t]]))


def sample(p: MaskPredictor, schedule: MaskSchedule, policy=UnmaskPolicy.UNIFORM, rng=None) -> SampleRun:
    policy = UnmaskPolicy(policy)
    rng = np.random.default_rng(rng)
    L, T = schedule.L, schedule.T
    y = np.full(L, MASK, dtype=np.int64)
    increments: list[tuple[int, ...]] = [()] * T
    step_lp = np.zeros(T)
    for t in range(T, 0, -1):
        s = schedule.sizes[t - 1]
        if policy is UnmaskPolicy.UNIFORM:
            masked = np.flatnonzero(y == MASK)
            chosen = tuple(sorted(int(i) for i in rng.choice(masked, s, replace=False)))
        else:
            chosen = adaptive_trajectory_step(p, y, s)
        # all tokens of a step are drawn from predictions on the same Y_t
        cats = p.predict(y, chosen)
        draws = [cats[i].sample(rng) for i in chosen]
        step_lp[t - 1] = sum(cats[i].log_probs[v] for i, v in zip(chosen, draws))
        y[list(chosen)] = draws
        increments[t - 1] = chosen
    return SampleRun(y, MaskTrajectory(tuple(increments)), step_lp)


def step_log_probs(x, traj: MaskTrajectory, p: MaskPredictor) -> np.ndarray:
    x = np.asarray(x, dtype=np.int64)
    out = np.zeros(traj.T)
    for t in range(1, traj.T + 1):
        y = project(x, traj.unmasked_set(t))
        cats = p.predict(y, traj.revealed(t))
        out[t - 1] = sum(cats[i].log_probs[x[i]] for i in traj.revealed(t))
    return out


def output_log_prob(x, traj: MaskTrajectory, p: MaskPredictor) -> float:
    """``log p(Y_0 = x | M = traj)``: product over steps of the predictor on ``x`` restricted to ``W_t``."""
    return float(step_log_probs(x, traj, p).sum())


def adaptive_labels(p: MaskPredictor, x: np.ndarray, schedule: MaskSchedule) -> np.ndarray:
    """Trajectory labels the entropy-adaptive sampler follows when its output is ``x``.

    The adaptive choice at each step depends only on already revealed tokens,
    so for a given output the trajectory is a deterministic function of it and
    ``log p(Y_0 = x)`` is the sum of conditionals along these labels.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.int64))
    if isinstance(p.oracle, PottsChain):
        chunk = _ADAPTIVE_CHUNK
        return np.concatenate(
            [_potts_adaptive_labels(p, x[k : k + chunk], schedule) for k in range(0, len(x), chunk)]
        )
    labels = np.zeros(x.shape, dtype=np.int32)
    for r, row in enumerate(x):
        y = np.full(schedule.L, MASK, dtype=np.int64)
        for t in range(schedule.T, 0, -1):
            chosen = list(adaptive_trajectory_step(p, y, schedule.sizes[t - 1]))
            labels[r, chosen] = t
            y[chosen] = row[chosen]
    return labels


def _potts_adaptive_labels(p: MaskPredictor, x: np.ndarray, schedule: MaskSchedule) -> np.ndarray:
    d: PottsChain = p.oracle
    n, L = x.shape
    K = d.K
    P = d.powers
    pos = np.arange(L)
    labels = np.zeros((n, L), dtype=np.int32)
    revealed = np.zeros((n, L), dtype=bool)
    rows = np.arange(n)[:, None]
    for t in range(schedule.T, 0, -1):
        s = schedule.sizes[t - 1]
        left = np.maximum.accumulate(np.where(revealed, pos, -1), axis=1)
        right = np.minimum.accumulate(np.where(revealed, pos, L)[:, ::-1], axis=1)[:, ::-1]
        # neighbours strictly left/right: shift by one position
        a = np.concatenate([np.full((n, 1), -1), left[:, :-1]], axis=1)
        b = np.concatenate([right[:, 1:], np.full((n, 1), L)], axis=1)
        has_a, has_b = a >= 0, b < L
        xa = x[rows, np.clip(a, 0, L - 1)]
        xb = x[rows, np.clip(b, 0, L - 1)]
        w = np.ones((n, L, K))
        w = np.where(has_a[..., None], P[np.where(has_a, pos - a, 1), xa, :], w)
        w = w * np.where(has_b[..., None], P[np.where(has_b, b - pos, 1)[..., None], np.arange(K), xb[..., None]], 1.0)
        probs = w / w.sum(axis=2, keepdims=True)
        if p.alpha:
            probs = (1 - p.alpha) * probs + p.alpha / K
        h = np.round(entr(probs).sum(axis=2), ENTROPY_TIE_DECIMALS)
        h[revealed] = np.inf
        chosen = np.argsort(h, axis=1, kind="stable")[:, :s]
        labels[rows, chosen] = t
        revealed[rows, chosen] = True
    return labels
