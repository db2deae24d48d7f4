"""Sampling-error measurement, decomposition identities and bound evaluation.

KL values are in nats.  The sampling error of a predictor ``p`` under a
schedule is ``E_M[KL(p_data || p_{Y_0 | M})]``, the divergence between the data
law and the sampler's output law given the mask trajectory, averaged over
trajectories drawn from the forward process.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import montecarlo
from .batch import conditional_logprobs
from .errors import InvalidArgument, ZeroProbabilityContext
from .oracle import as_tabular
from .predictor import MaskPredictor, optimal, training_error
from .sampler import UnmaskPolicy, adaptive_labels
from .schedule import (
    MaskSchedule,
    MaskTrajectory,
    RandomLowerBoundSchedule,
    enumerate_trajectories,
    is_power_of_two,
    sample_labels,
)


@dataclass(frozen=True)
class KlReport:
    estimate: float
    stderr: float
    n_samples: int
    method: str
    T: float
    s_max: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class BoundReport:
    thm1_upper: float
    corollary_upper: float
    refined_upper: float | None
    lower: float | None
    mi_sum: float
    eps_train: float
    C1: float
    refined_applicable: bool

    def to_dict(self) -> dict:
        return asdict(self)


def _kl_weighted(log_p: np.ndarray, log_q: np.ndarray) -> float:
    p = np.exp(log_p)
    with np.errstate(invalid="ignore"):
        return float(np.sum(np.where(p > 0, p * (log_p - log_q), 0.0)))


# -- exact KL through the output law ------------------------------------------


class _OutputLaw:
    """Caches per-(position, context) predictor grids across trajectories."""

    def __init__(self, d, p: MaskPredictor):
        self.tab = as_tabular(d)
        self.ptab = as_tabular(p.oracle)
        if self.ptab.L != self.tab.L or self.ptab.K != self.tab.K:
            raise InvalidArgument("predictor oracle and data distribution have different shapes")
        self.p = p
        self._grids: dict[tuple, np.ndarray] = {}

    def grid(self, i: int, W: tuple[int, ...]) -> np.ndarray:
        key = (i, W)
        g = self._grids.get(key)
        if g is None:
            g = self._grids[key] = self.p.perturb_log(self.ptab.conditional_grid(i, W))
        return g

    def log_prob_grid(self, traj: MaskTrajectory) -> np.ndarray:
        """``log p_{Y_0|M}(x | traj)`` over the full grid."""
        if traj.L != self.tab.L:
            raise InvalidArgument(f"trajectory length {traj.L} != distribution length {self.tab.L}")
        out = np.zeros((1,) * self.tab.L)
        for t in range(1, traj.T + 1):
            W = traj.unmasked_set(t)
            for i in traj.revealed(t):
                out = out + self.grid(i, W)
        return out


def kl_given_mask_exact(d, p: MaskPredictor, traj: MaskTrajectory) -> float:
    law = _OutputLaw(d, p)
    return _kl_weighted(law.tab.log_table, law.log_prob_grid(traj))


def kl_expected_exact(d, p: MaskPredictor, schedule: MaskSchedule) -> KlReport:
    law = _OutputLaw(d, p)
    total = sum(
        prob * _kl_weighted(law.tab.log_table, law.log_prob_grid(traj))
        for traj, prob in enumerate_trajectories(schedule)
    )
    return KlReport(total, 0.0, 0, "exact-enumeration", schedule.T, schedule.s_max)


def output_distribution_exact(d, p: MaskPredictor, schedule: MaskSchedule) -> np.ndarray:
    """``p_{Y_0} = E_M[p_{Y_0|M}]`` as a full probability grid."""
    law = _OutputLaw(d, p)
    out = np.zeros((law.tab.K,) * law.tab.L)
    for traj, prob in enumerate_trajectories(schedule):
        out = out + prob * np.exp(law.log_prob_grid(traj))
    return out


# -- exact KL through conditional total correlations --------------------------


def _total_correlation(q: np.ndarray) -> np.ndarray:
    """KL(q || product of its marginals) for a batch ``q`` of shape (C, K, ..., K)."""
    n_axes = q.ndim - 1
    prod = np.ones_like(q)
    for ax in range(1, n_axes + 1):
        others = tuple(a for a in range(1, n_axes + 1) if a != ax)
        prod = prod * q.sum(axis=others, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(q > 0, q * np.log(q / prod), 0.0)
    return terms.reshape(q.shape[0], -1).sum(axis=1)


def _conditional_block(tab, W, blocks) -> tuple[np.ndarray, np.ndarray]:
    """Joint of the positions in ``blocks`` given each context value of ``W``.

    Returns ``(weights, q)``: ``weights[c] = p(x_W = c)`` and ``q[c]`` the
    conditional joint with one axis per position of the concatenated blocks
    (in block order).  Contexts of probability zero get a zero ``q``.
    """
    order = list(W) + [i for blk in blocks for i in blk]
    keep = sorted(order)
    joint = np.exp(tab.log_marginal(keep))
    joint = np.transpose(joint, [keep.index(j) for j in order]) if order else joint
    n_free = len(order) - len(W)
    joint = joint.reshape((tab.K ** len(W),) + (tab.K,) * n_free)
    weights = joint.reshape(joint.shape[0], -1).sum(axis=1)
    safe = np.where(weights > 0, weights, 1.0)
    q = joint / safe.reshape((-1,) + (1,) * n_free)
    return weights, q


def kl_decomposition_exact(d, schedule: MaskSchedule) -> float:
    """Sampling error of the optimal predictor as a sum of per-step expected
    conditional total correlations of the revealed block given the context."""
    tab = as_tabular(d)
    cache: dict[tuple, float] = {}
    total = 0.0
    for traj, prob in enumerate_trajectories(schedule):
        for t in range(1, traj.T + 1):
            key = (traj.unmasked_set(t), traj.revealed(t))
            val = cache.get(key)
            if val is None:
                weights, q = _conditional_block(tab, key[0], [key[1]])
                val = cache[key] = float(np.sum(weights * _total_correlation(q)))
            total += prob * val
    return total


def two_batch_terms(tab, W, d_minus, d_plus) -> dict[str, np.ndarray]:
    """Per-context terms of the two-batch split of one step's total correlation.

    ``lhs = first + second + cross`` should hold for every context value, with
    ``first`` the total correlation inside ``d_minus``, ``second`` the expected
    total correlation inside ``d_plus`` once ``d_minus`` is revealed, and
    ``cross`` the summed conditional mutual information between each token of
    ``d_plus`` and the block ``d_minus``.
    """
    weights, q = _conditional_block(tab, W, [d_minus, d_plus])
    C, K = q.shape[0], tab.K
    nm, npl = len(d_minus), len(d_plus)
    lhs = _total_correlation(q)
    minus_axes = tuple(range(1, nm + 1))
    plus_axes = tuple(range(nm + 1, nm + npl + 1))
    q_minus = q.sum(axis=plus_axes)
    first = _total_correlation(q_minus)
    flat_minus = q_minus.reshape(C * K**nm)
    q_pm = q.reshape((C * K**nm,) + (K,) * npl)
    safe = np.where(flat_minus > 0, flat_minus, 1.0)
    cond_plus = q_pm / safe.reshape((-1,) + (1,) * npl)
    second = (flat_minus * _total_correlation(cond_plus)).reshape(C, K**nm).sum(axis=1)
    cross = np.zeros(C)
    for k in range(npl):
        drop = tuple(a for a in plus_axes if a != nm + 1 + k)
        qi = q.sum(axis=drop) if drop else q  # axes: minus block then token k
        qi = qi.reshape(C, K**nm, K)
        pm = qi.sum(axis=2, keepdims=True)
        pi = qi.sum(axis=1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            cross += np.where(qi > 0, qi * np.log(qi / (pm * pi)), 0.0).sum(axis=(1, 2))
    return {"weights": weights, "lhs": lhs, "first": first, "second": second, "cross": cross}


def two_batch_identity_check(d, schedule: MaskSchedule, traj: MaskTrajectory, rng) -> float:
    """Largest absolute residual of the two-batch split over steps with ``s_t >= 2``.

    Each such step's revealed set is split at random into a first batch of
    ``ceil(s_t/2)`` positions and a second batch of the rest; the identity is
    checked for every context value of positive probability.
    """
    if traj.schedule != schedule:
        raise InvalidArgument("trajectory does not follow the schedule")
    steps = [t for t in range(1, traj.T + 1) if schedule.sizes[t - 1] >= 2]
    if not steps:
        raise InvalidArgument("two-batch identity needs a step with s_t >= 2")
    rng = np.random.default_rng(rng)
    tab = as_tabular(d)
    worst = 0.0
    for t in steps:
        D = list(traj.revealed(t))
        n_minus = math.ceil(len(D) / 2)
        minus = sorted(int(i) for i in rng.choice(D, n_minus, replace=False))
        plus = [i for i in D if i not in minus]
        terms = two_batch_terms(tab, traj.unmasked_set(t), minus, plus)
        resid = np.abs(terms["lhs"] - terms["first"] - terms["second"] - terms["cross"])
        worst = max(worst, float(np.max(np.where(terms["weights"] > 0, resid, 0.0))))
    return worst


def decoupling_check(d, p: MaskPredictor, schedule: MaskSchedule, eps_train: float | None = None) -> float:
    """``|(E_M KL(p) - E_M KL(p*)) - eps_train|`` computed exactly.

    ``eps_train`` defaults to the exact training error of ``p``.
    """
    if eps_train is None:
        eps_train = training_error(p, d, schedule, "exact").value
    gap = kl_expected_exact(d, p, schedule).estimate - kl_expected_exact(d, optimal(d), schedule).estimate
    return abs(gap - eps_train)


# -- Monte Carlo -------------------------------------------------------------


def _draw_labels(schedule, m: int, rng) -> np.ndarray:
    if isinstance(schedule, RandomLowerBoundSchedule):
        out = np.empty((m, schedule.L), dtype=np.int32)
        for r in range(m):
            out[r] = rng.permutation(schedule.draw(rng).block_labels())
        return out
    return sample_labels(schedule, m, rng)


def kl_samples(d, p: MaskPredictor, schedule, m: int, rng, policy=UnmaskPolicy.UNIFORM) -> np.ndarray:
    """Per-sample values ``log p_data(X) - log p_{Y_0|M}(X | M)`` with X ~ data, M ~ forward law."""
    policy = UnmaskPolicy(policy)
    labels = _draw_labels(schedule, m, rng)
    x = d.sample(m, rng)
    if policy is UnmaskPolicy.ENTROPY_ADAPTIVE:
        if not isinstance(schedule, MaskSchedule):
            raise InvalidArgument("entropy-adaptive policy needs a fixed schedule")
        labels = adaptive_labels(p, x, schedule)
    lp_hat = p.perturb_log(conditional_logprobs(p.oracle, x, labels)).sum(axis=1)
    vals = d.log_prob(x) - lp_hat
    bad = np.flatnonzero(np.isnan(vals))
    if bad.size:
        raise ZeroProbabilityContext(f"zero-probability context at sample index {int(bad[0])}")
    return vals


def kl_mc(d, p: MaskPredictor, schedule, n: int, rng, *, policy=UnmaskPolicy.UNIFORM, threads: int = 1) -> KlReport:
    """Unbiased paired-sample estimate of the expected sampling error.

    ``schedule`` may be a :class:`MaskSchedule` or a
    :class:`RandomLowerBoundSchedule`, in which case a fresh schedule is drawn
    for every sample.  Under the entropy-adaptive policy the trajectory is the
    one the sampler follows along the drawn sequence, so the estimate is
    ``KL(p_data || p_{Y_0})`` for that sampler.
    """
    if n < 2:
        raise InvalidArgument("kl_mc needs n >= 2")
    values = montecarlo.run_replicas(
        lambda g, m: kl_samples(d, p, schedule, m, g, policy), n, rng, threads
    )
    est = montecarlo.summarize(values)
    if isinstance(schedule, MaskSchedule):
        T, s_max = schedule.T, schedule.s_max
    else:
        T, s_max = 4 * schedule.L / (3 * schedule.s_max), schedule.s_max
    return KlReport(est.mean, est.stderr, est.n, "monte-carlo", T, s_max)


# -- bounds ------------------------------------------------------------------


def mi_sum(d) -> float:
    """Sum over positions of I(X_i ; all other tokens)."""
    return float(sum(d.mi_token_rest(i) for i in range(d.L)))


def _ceil_log2(n: int) -> int:
    return (n - 1).bit_length()


def thm1_bound(d, schedule: MaskSchedule, eps_train: float, mi: float | None = None) -> float:
    mi = mi_sum(d) if mi is None else mi
    return (2 ** _ceil_log2(schedule.s_max) - 1) / schedule.L * mi + eps_train


def corollary_constant(schedule: MaskSchedule) -> float:
    return schedule.T * schedule.s_max / schedule.L


def corollary_bound(d, schedule: MaskSchedule, eps_train: float, mi: float | None = None) -> float:
    mi = mi_sum(d) if mi is None else mi
    return corollary_constant(schedule) / schedule.T * mi + eps_train


def hierarchical_mi(d, s_max: int, n_subsets=None, rng=None) -> float:
    """``sum_i sum_{j=0}^{log2 s_max} 2^-j E[I(X_i ; X_W)]`` with ``|W| = L - s_max 2^-j``."""
    if not is_power_of_two(s_max) or s_max > d.L:
        raise InvalidArgument(f"s_max={s_max} must be a power of two no larger than L={d.L}")
    total = 0.0
    for j in range(_ceil_log2(s_max) + 1):
        size = d.L - s_max // 2**j
        level = sum(d.expected_mi_random_subset(i, size, n_subsets, rng) for i in range(d.L))
        total += level / 2**j
    return total


def refined_bound_reindexed(d, schedule: MaskSchedule, eps_train: float, n_subsets=None, rng=None) -> float:
    """``(s_max/L) sum_i sum_{j=1}^{log2 s_max} 2^-j E[I(X_i ; X_W)]`` with ``|W| = L - s_max 2^-j``.

    Each halving step of size ``s`` costs the information a token gets from a
    context of size ``L - s/2``, so the level-``j`` term is indexed one level
    up relative to :func:`refined_bound`.  Reported as a diagnostic.
    """
    s_max = schedule.s_max
    if s_max == 1:
        return eps_train
    if not is_power_of_two(s_max):
        raise InvalidArgument(f"refined bound needs s_max a power of two, got {s_max}")
    total = 0.0
    for j in range(1, _ceil_log2(s_max) + 1):
        size = d.L - s_max // 2**j
        total += sum(d.expected_mi_random_subset(i, size, n_subsets, rng) for i in range(d.L)) / 2**j
    return s_max / d.L * total + eps_train


def refined_bound(d, schedule: MaskSchedule, eps_train: float, n_subsets=None, rng=None, hier=None) -> float:
    s_max = schedule.s_max
    if s_max == 1:
        return eps_train  # premise s_max > 1 fails: not applicable
    if not is_power_of_two(s_max):
        raise InvalidArgument(f"refined bound needs s_max a power of two, got {s_max}")
    hier = hierarchical_mi(d, s_max, n_subsets, rng) if hier is None else hier
    return s_max / (2 * d.L) * hier + eps_train


def lower_bound_value(d, s_max: int, eps_train: float, n_subsets=None, rng=None, hier=None) -> float:
    if s_max < 2 or not is_power_of_two(s_max):
        raise InvalidArgument(f"lower bound needs s_max > 1 a power of two, got {s_max}")
    hier = hierarchical_mi(d, s_max, n_subsets, rng) if hier is None else hier
    return s_max / (16 * d.L) * hier + eps_train


def bound_report(d, schedule: MaskSchedule, eps_train: float, n_subsets=None, rng=None) -> BoundReport:
    mi = mi_sum(d)
    s_max = schedule.s_max
    applicable = s_max > 1 and is_power_of_two(s_max)
    if applicable:
        hier = hierarchical_mi(d, s_max, n_subsets, rng)
        refined = refined_bound(d, schedule, eps_train, hier=hier)
        lower = lower_bound_value(d, s_max, eps_train, hier=hier)
    else:
        refined = eps_train if s_max == 1 else None
        lower = None
    return BoundReport(
        thm1_upper=thm1_bound(d, schedule, eps_train, mi),
        corollary_upper=corollary_bound(d, schedule, eps_train, mi),
        refined_upper=refined,
        lower=lower,
        mi_sum=mi,
        eps_train=eps_train,
        C1=corollary_constant(schedule),
        refined_applicable=applicable,
    )


# -- token error rate --------------------------------------------------------


@dataclass(frozen=True)
class TerReport:
    gap_bits: float
    kl_per_token_bits: float
    residual: float
    method: str
    stderr: float = 0.0


def ter_gap(d, p: MaskPredictor, schedule: MaskSchedule, n: int | None = None, rng=None, n_inner: int = 64) -> TerReport:
    """``log2 TER(p_{Y_0}) - log2 TER(p_data)`` in bits.

    Exact mode (``n`` is None) builds ``p_{Y_0}`` by enumeration and also
    returns the residual against ``KL(p_data || p_{Y_0}) / (L ln 2)``.  With
    ``n`` given, each of ``n`` data samples gets ``p_{Y_0}(x)`` estimated from
    ``n_inner`` trajectories; the log of that average is biased upward in the
    gap for small ``n_inner``.
    """
    L = schedule.L
    if n is None:
        tab = as_tabular(d)
        p_y = output_distribution_exact(d, p, schedule)
        with np.errstate(divide="ignore"):
            log_py = np.log(p_y)
        p_x = tab.probs
        sel = p_x > 0
        ter_y = -np.sum(p_x[sel] * log_py[sel]) / (L * math.log(2))
        ter_x = -np.sum(p_x[sel] * tab.log_table[sel]) / (L * math.log(2))
        gap = float(ter_y - ter_x)
        kl = _kl_weighted(tab.log_table, log_py) / (L * math.log(2))
        return TerReport(gap, kl, abs(gap - kl), "exact-enumeration")
    rng = np.random.default_rng(rng)
    x = d.sample(n, rng)
    log_py = np.empty((n, n_inner))
    for k in range(n_inner):
        labels = sample_labels(schedule, n, rng)
        log_py[:, k] = p.perturb_log(conditional_logprobs(p.oracle, x, labels)).sum(axis=1)
    mx = log_py.max(axis=1, keepdims=True)
    log_mean = (mx + np.log(np.mean(np.exp(log_py - mx), axis=1, keepdims=True)))[:, 0]
    vals = (d.log_prob(x) - log_mean) / (L * math.log(2))
    est = montecarlo.summarize(vals)
    return TerReport(est.mean, est.mean, float("nan"), "monte-carlo", est.stderr)
