"""Acceptance criteria 1-12.

Each test records one ``[PASS]``/``[FAIL]`` line (collected and printed at the
end of the pytest run by ``conftest.pytest_terminal_summary``) and then
asserts.  Run on its own with::

    pytest tests/test_acceptance.py -v
"""
import itertools
import math
import time

import numpy as np
import pytest

from maskdiff import analysis as A
from maskdiff import experiments
from maskdiff.config import ExperimentConfig
from maskdiff.oracle import PottsChain, TabularDistribution
from maskdiff.predictor import optimal, perturbed, training_error
from maskdiff.schedule import MaskSchedule, RandomLowerBoundSchedule, compositions, enumerate_trajectories

RESULTS: list[str] = []

LN3 = math.log(3)
# I(X1; X2) for a two-token Potts chain with stay probability 3/4
I_TIGHT = 0.75 * math.log(1.5) + 0.25 * math.log(0.5)


def record(num: int, title: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {num:2d} {title}: {detail}"
    RESULTS.append(line)
    print(line)


def brute_grid(seed=2024, per_shape=4):
    """Random tabular instances over K in {2,3}, L in {2,3,4}, plus Potts J = ln 3."""
    rng = np.random.default_rng(seed)
    out = []
    for K, L in itertools.product((2, 3), (2, 3, 4)):
        out += [TabularDistribution.random(K, L, rng) for _ in range(per_shape)]
    out += [PottsChain(2, L, LN3).tabular for L in (2, 3, 4)]
    return out


GRID = brute_grid()


def test_c01_oracle_equivalence():
    t0 = time.perf_counter()
    worst, n = 0.0, 0
    for d in GRID:
        for s in compositions(d.L):
            a = A.kl_expected_exact(d, optimal(d), s).estimate
            b = A.kl_decomposition_exact(d, s)
            worst, n = max(worst, abs(a - b)), n + 1
    dt = time.perf_counter() - t0
    ok = worst < 1e-9 and dt < 60 and len(GRID) >= 20
    record(1, "exact KL = decomposition", ok, f"{len(GRID)} distributions, {n} schedules, max |diff| {worst:.2e} (tol 1e-9), {dt:.1f}s (< 60s)")
    assert ok


def test_c02_all_ones_zero():
    worst = 0.0
    for d in GRID:
        worst = max(worst, abs(A.kl_expected_exact(d, optimal(d), MaskSchedule((1,) * d.L)).estimate))
    d = PottsChain(10, 100, 2.0)
    r = A.kl_mc(d, optimal(d), MaskSchedule((1,) * 100), 100_000, 0)
    # an exactly-zero per-sample value carries ~1e-16 roundoff, so the noise
    # band gets a 1e-12 floor
    mc_ok = abs(r.estimate) <= 3 * r.stderr + 1e-12
    ok = worst <= 1e-12 and mc_ok
    record(2, "all-ones schedule is exact", ok, f"exact max {worst:.2e} (tol 1e-12); Potts K=10 L=100 MC {r.estimate:.2e} +- {r.stderr:.2e}")
    assert ok


def test_c03_tight_small_case():
    d = PottsChain(2, 2, LN3)
    s = MaskSchedule((2,))
    kl = A.kl_expected_exact(d, optimal(d), s).estimate
    b = A.thm1_bound(d, s, 0.0)
    ok = abs(kl - I_TIGHT) < 1e-12 and abs(b - I_TIGHT) < 1e-12 and round(kl, 6) == 0.130812
    record(3, "tight case L=2 T=1", ok, f"KL {kl:.12f}, bound {b:.12f}, I {I_TIGHT:.12f}")
    assert ok


def test_c04_thm1_dominance():
    worst, n = -math.inf, 0
    for d in GRID:
        mi = A.mi_sum(d)
        for s in compositions(d.L):
            for alpha in (0.0, 0.1, 0.5):
                p = perturbed(d, alpha)
                eps = training_error(p, d, s, "exact").value
                kl = A.kl_expected_exact(d, p, s).estimate
                worst, n = max(worst, kl - A.thm1_bound(d, s, eps, mi)), n + 1
    ok = worst <= 1e-9
    record(4, "mutual-information upper bound dominance", ok, f"{n} cases, max (KL - bound) {worst:.3e} (tol 1e-9)")
    assert ok


def test_c05_refined_bound():
    worst_dom, worst_ref, n, n_dom, n_ref = -math.inf, -math.inf, 0, 0, 0
    for d in GRID:
        mi = A.mi_sum(d)
        for s in compositions(d.L):
            if s.s_max not in (2, 4):
                continue
            kl = A.kl_expected_exact(d, optimal(d), s).estimate
            ref = A.refined_bound(d, s, 0.0)
            t1 = A.thm1_bound(d, s, 0.0, mi)
            n += 1
            n_dom += kl > ref + 1e-9
            n_ref += ref > t1 + 1e-10
            worst_dom, worst_ref = max(worst_dom, kl - ref), max(worst_ref, ref - t1)
    ok = n_dom == 0 and n_ref == 0
    record(
        5,
        "refined bound",
        ok,
        f"{n} cases; KL > refined in {n_dom} (max excess {worst_dom:.3e}, tol 1e-9); refined > thm1 in {n_ref} (max {worst_ref:.3e}, tol 1e-10)",
    )
    assert ok


def test_c06_lower_bound():
    rng = np.random.default_rng(6)
    cases = [(PottsChain(2, 4, LN3), "potts"), (TabularDistribution.random(2, 4, rng), "tabular"), (TabularDistribution.random(3, 4, rng), "tabular")]
    parts, ok = [], True
    for k, (d, name) in enumerate(cases):
        for s_max in (2, 4):
            r = A.kl_mc(d, optimal(d), RandomLowerBoundSchedule(d.L, s_max), 100_000, 60 + k)
            lb = A.lower_bound_value(d, s_max, 0.0)
            good = r.estimate >= lb - 3 * r.stderr
            ok &= good
            parts.append(f"{name} s_max={s_max}: {r.estimate:.4f}+-{r.stderr:.4f} vs {lb:.4f}")
    record(6, "lower bound under its schedule", ok, "; ".join(parts))
    assert ok


def test_c07_decoupling():
    worst, n = 0.0, 0
    for d in GRID:
        for s in compositions(d.L):
            for alpha in (0.1, 0.5, 1.0):
                worst, n = max(worst, A.decoupling_check(d, perturbed(d, alpha), s)), n + 1
    ok = worst < 1e-9
    record(7, "decoupling identity", ok, f"{n} cases, max residual {worst:.2e} (tol 1e-9)")
    assert ok


def test_c08_two_batch():
    rng = np.random.default_rng(8)
    worst, n = 0.0, 0
    for d in GRID:
        for s in compositions(d.L):
            if not set(s.sizes) & {2, 4}:
                continue
            for traj, _ in enumerate_trajectories(s):
                worst, n = max(worst, A.two_batch_identity_check(d, s, traj, rng)), n + 1
    ok = worst < 1e-10
    record(8, "two-batch identity", ok, f"{n} trajectories, max residual {worst:.2e} (tol 1e-10)")
    assert ok


@pytest.mark.slow
def test_c09_rate_in_T():
    t0 = time.perf_counter()
    cfg = ExperimentConfig.from_dict({"n_samples": 200_000, "T_list": [2, 4, 5, 10, 20, 25, 50]})
    rows, fit = experiments.sweep_T(cfg, threads=1)
    dt = time.perf_counter() - t0
    slope = fit["slope"]
    ok = fit["defined"] and -1.15 <= slope <= -0.85 and dt <= 300
    kls = ", ".join(f"T={r.T:g}:{r.kl_estimate:.4g}" for r in rows)
    record(9, "log-log slope in T", ok, f"slope {slope:.4f} (target [-1.15, -0.85]), {dt:.0f}s; {kls}")
    assert ok


@pytest.mark.slow
def test_c10_linear_in_mi():
    t0 = time.perf_counter()
    cfg = ExperimentConfig.from_dict({"n_samples": 200_000, "J_list": [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0]})
    rows, fit = experiments.sweep_J(cfg, T=10, threads=1)
    dt = time.perf_counter() - t0
    mis = [r.mi_sum for r in rows if r.mi_sum > 0]
    spread = max(mis) / min(mis)
    ok = fit["defined"] and fit["r"] >= 0.98 and spread >= 5 and dt <= 300
    record(10, "KL linear in MI", ok, f"Pearson r {fit['r']:.5f} (>= 0.98), MI spread {spread:.0f}x, {dt:.0f}s")
    assert ok


def _brute_mi_rest(probs, i):
    """I(X_i ; X_rest) from the raw joint table."""
    K = probs.shape[0]
    pj = np.moveaxis(probs, i, 0).reshape(K, -1)
    outer = pj.sum(1, keepdims=True) * pj.sum(0, keepdims=True)
    m = pj > 0
    return float(np.sum(pj[m] * np.log(pj[m] / outer[m])))


def _potts_joint(K, L, J):
    P = np.exp(J * np.eye(K))
    P /= P.sum(1, keepdims=True)
    out = np.full((K,), 1 / K)
    for _ in range(L - 1):
        out = out[..., None] * P.reshape((1,) * (out.ndim - 1) + (K, K))
    return out


def test_c11_mi_oracle():
    worst = 0.0
    for J in (0.0, 0.5, LN3, 2.0):
        d = PottsChain(2, 5, J)
        joint = _potts_joint(2, 5, J)
        for i in range(5):
            worst = max(worst, abs(d.mi_token_rest(i) - _brute_mi_rest(joint, i)))
    ok = worst < 1e-10
    record(11, "Markov-reduced MI = brute force", ok, f"max |diff| {worst:.2e} (tol 1e-10)")
    assert ok


def test_c12_ter():
    worst, worst_u, n = 0.0, -math.inf, 0
    for d in GRID:
        for s in compositions(d.L):
            worst, n = max(worst, A.ter_gap(d, optimal(d), s).residual), n + 1
        u = A.ter_gap(d, perturbed(d, 1.0), MaskSchedule((d.L,)))
        worst_u = max(worst_u, u.gap_bits - math.log2(d.K))
    ok = worst < 1e-9 and worst_u <= 1e-12
    record(12, "TER gap", ok, f"{n} cases, max residual {worst:.2e} (tol 1e-9); uniform baseline max (gap - log2 K) {worst_u:.3f} bits")
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
