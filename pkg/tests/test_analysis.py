import math

import numpy as np
import pytest

from conftest import LN3, all_sequences, random_tables
from maskdiff import analysis as A
from maskdiff.errors import InvalidArgument, ZeroProbabilityContext
from maskdiff.oracle import PottsChain, TabularDistribution
from maskdiff.predictor import optimal, perturbed, training_error
from maskdiff.sampler import UnmaskPolicy, output_log_prob
from maskdiff.schedule import (
    MaskSchedule,
    MaskTrajectory,
    RandomLowerBoundSchedule,
    balanced_schedule,
    compositions,
    enumerate_trajectories,
    sample_trajectory,
)

I_TIGHT = 0.75 * math.log(1.5) + 0.25 * math.log(0.5)


def brute_kl_given_mask(d, p, traj):
    t = d.tabular if isinstance(d, PottsChain) else d
    total = 0.0
    for x in all_sequences(t.K, t.L):
        px = t.probs[tuple(x)]
        if px > 0:
            total += px * (math.log(px) - output_log_prob(x, traj, p))
    return total


def test_tight_case(potts_tight):
    p = optimal(potts_tight)
    traj = MaskTrajectory(((0, 1),))
    assert abs(A.kl_given_mask_exact(potts_tight, p, traj) - I_TIGHT) < 1e-12
    assert abs(A.kl_expected_exact(potts_tight, p, MaskSchedule((2,))).estimate - I_TIGHT) < 1e-12
    assert abs(A.thm1_bound(potts_tight, MaskSchedule((2,)), 0.0) - I_TIGHT) < 1e-12


def test_kl_given_mask_vs_brute(rng):
    d = TabularDistribution.random(2, 3, rng)
    p = perturbed(d, 0.2)
    traj = MaskTrajectory(((2,), (0, 1)))
    assert abs(A.kl_given_mask_exact(d, p, traj) - brute_kl_given_mask(d, p, traj)) < 1e-12


def test_all_ones_zero(rng):
    d = TabularDistribution.random(3, 3, rng)
    for traj, _ in enumerate_trajectories(MaskSchedule((1, 1, 1))):
        assert abs(A.kl_given_mask_exact(d, optimal(d), traj)) < 1e-12
    assert abs(A.kl_decomposition_exact(d, MaskSchedule((1, 1, 1)))) < 1e-12


def test_product_distribution_zero(rng):
    d = TabularDistribution.product([rng.dirichlet(np.ones(2)) for _ in range(3)])
    assert abs(A.kl_given_mask_exact(d, optimal(d), MaskTrajectory(((0, 1, 2),)))) < 1e-12
    assert abs(A.kl_decomposition_exact(PottsChain(2, 3, 0.0), MaskSchedule((3,)))) < 1e-12


def test_exact_vs_decomposition(rng):
    for d in random_tables(6, rng) + [PottsChain(2, 3, LN3)]:
        for s in compositions(d.L):
            a = A.kl_expected_exact(d, optimal(d), s).estimate
            b = A.kl_decomposition_exact(d, s)
            assert abs(a - b) < 1e-9


def test_single_step_is_total_correlation(rng):
    d = TabularDistribution.random(2, 3, rng)
    P = d.probs
    prod = np.einsum("i,j,k->ijk", P.sum((1, 2)), P.sum((0, 2)), P.sum((0, 1)))
    tc = float(np.sum(P * np.log(P / prod)))
    assert abs(A.kl_decomposition_exact(d, MaskSchedule((3,))) - tc) < 1e-12


def test_kl_mc_tight(potts_tight):
    r = A.kl_mc(potts_tight, optimal(potts_tight), MaskSchedule((2,)), 100_000, 1)
    assert abs(r.estimate - I_TIGHT) < 3 * r.stderr
    assert r.method == "monte-carlo" and r.n_samples == 100_000


def test_kl_mc_vs_exact_tabular(rng):
    d = TabularDistribution.random(2, 4, rng)
    s = MaskSchedule((2, 2))
    exact = A.kl_expected_exact(d, optimal(d), s).estimate
    r = A.kl_mc(d, optimal(d), s, 100_000, 2)
    assert abs(r.estimate - exact) < 3 * r.stderr


def test_kl_mc_vs_exact_perturbed_potts():
    d = PottsChain(3, 5, 1.2)
    s = MaskSchedule((2, 2, 1))
    p = perturbed(d, 0.15)
    exact = A.kl_expected_exact(d, p, s).estimate
    r = A.kl_mc(d, p, s, 100_000, 5)
    assert abs(r.estimate - exact) < 3 * r.stderr


def test_kl_mc_all_ones_large_potts():
    d = PottsChain(10, 100, 2.0)
    r = A.kl_mc(d, optimal(d), balanced_schedule(100, 100), 20_000, 9)
    assert abs(r.estimate) <= 3 * r.stderr + 1e-12


def test_kl_mc_deterministic_across_threads():
    d = PottsChain(4, 40, 1.0)
    s = balanced_schedule(40, 8)
    a = A.kl_mc(d, optimal(d), s, 50_000, 7, threads=1)
    b = A.kl_mc(d, optimal(d), s, 50_000, 7, threads=4)
    assert a == b


def test_kl_mc_adaptive_vs_exact_output_law():
    # adaptive KL is KL(p_data || p_Y0) for the deterministic adaptive trajectory
    d = PottsChain(2, 4, LN3)
    p = optimal(d)
    s = MaskSchedule((2, 1, 1))
    from maskdiff.sampler import adaptive_labels

    xs = all_sequences(2, 4)
    labels = adaptive_labels(p, xs, s)
    log_py = np.array([output_log_prob(x, MaskTrajectory.from_labels(l), p) for x, l in zip(xs, labels)])
    px = np.exp(d.log_prob(xs))
    exact = float(np.sum(px * (np.log(px) - log_py)))
    r = A.kl_mc(d, p, s, 60_000, 3, policy=UnmaskPolicy.ENTROPY_ADAPTIVE)
    assert abs(r.estimate - exact) < 3 * r.stderr + 1e-12


def test_kl_mc_zero_probability_context():
    p3 = np.zeros((2, 2, 2))
    p3[0, 0, 0] = p3[1, 1, 1] = 0.5
    data = TabularDistribution.from_probs(np.full((2, 2, 2), 1 / 8))
    p = optimal(TabularDistribution.from_probs(p3))
    with pytest.raises(ZeroProbabilityContext, match="sample index"):
        A.kl_mc(data, p, MaskSchedule((1, 1, 1)), 1000, 0)


def test_two_batch_identity(rng):
    for d, sizes in [
        (TabularDistribution.random(2, 3, rng), (2, 1)),
        (TabularDistribution.random(2, 4, rng), (4,)),
        (PottsChain(2, 4, LN3), (1, 3)),
    ]:
        s = MaskSchedule(sizes)
        traj = sample_trajectory(s, rng)
        assert A.two_batch_identity_check(d, s, traj, rng) < 1e-10


def test_two_batch_independent_terms_zero(rng):
    d = TabularDistribution.product([rng.dirichlet(np.ones(2)) for _ in range(4)])
    terms = A.two_batch_terms(d, (0,), [1, 2], [3])
    for k in ("lhs", "first", "second", "cross"):
        assert np.all(np.abs(terms[k]) < 1e-12)


def test_two_batch_needs_multi_token_step(rng):
    d = TabularDistribution.random(2, 3, rng)
    s = MaskSchedule((1, 1, 1))
    with pytest.raises(InvalidArgument):
        A.two_batch_identity_check(d, s, sample_trajectory(s, rng), rng)


@pytest.mark.parametrize("alpha,K,L,sizes", [(0.0, 2, 3, (2, 1)), (0.3, 2, 3, (2, 1)), (1.0, 2, 2, (1, 1))])
def test_decoupling(alpha, K, L, sizes, rng):
    d = TabularDistribution.random(K, L, rng)
    tol = 1e-12 if alpha == 0 else 1e-9
    assert A.decoupling_check(d, perturbed(d, alpha), MaskSchedule(sizes)) < tol


def test_uniform_output_closed_form(rng):
    d = TabularDistribution.random(2, 2, rng)
    kl = A.kl_expected_exact(d, perturbed(d, 1.0), MaskSchedule((1, 1))).estimate
    neg_h = float(np.sum(d.probs * d.log_table))
    assert abs(kl - (neg_h + 2 * math.log(2))) < 1e-12


def test_thm1_cases(rng):
    d = TabularDistribution.random(2, 3, rng)
    assert A.thm1_bound(d, MaskSchedule((1, 1, 1)), 0.3) == 0.3
    ind = PottsChain(3, 5, 0.0)
    assert A.thm1_bound(ind, MaskSchedule((4, 1)), 0.1) == pytest.approx(0.1, abs=1e-15)


def test_corollary_constant():
    assert A.corollary_constant(balanced_schedule(100, 10)) == 1
    assert A.corollary_constant(MaskSchedule((4, 2, 2))) == 1.5
    assert A.corollary_bound(PottsChain(3, 8, 0.0), MaskSchedule((4, 2, 2)), 0.2) == pytest.approx(0.2)


def test_refined_cases(rng):
    d = TabularDistribution.random(2, 4, rng)
    assert A.refined_bound(d, MaskSchedule((1, 1, 1, 1)), 0.2) == 0.2
    with pytest.raises(InvalidArgument):
        A.refined_bound(d, MaskSchedule((3, 1)), 0.0)
    ind = TabularDistribution.product([rng.dirichlet(np.ones(2)) for _ in range(4)])
    assert A.refined_bound(ind, MaskSchedule((2, 2)), 0.05) == pytest.approx(0.05, abs=1e-12)
    assert A.lower_bound_value(ind, 4, 0.05) == pytest.approx(0.05, abs=1e-12)


def test_lower_is_eighth_of_refined(rng):
    d = TabularDistribution.random(2, 4, rng)
    for s_max, s in [(2, MaskSchedule((2, 2))), (4, MaskSchedule((4,)))]:
        assert A.lower_bound_value(d, s_max, 0.0) == pytest.approx(A.refined_bound(d, s, 0.0) / 8, rel=1e-12)
    with pytest.raises(InvalidArgument):
        A.lower_bound_value(d, 3, 0.0)


def test_refined_below_thm1_random_tables(rng):
    bad = []
    for _ in range(20):
        d = TabularDistribution.random(2, 4, rng)
        s = MaskSchedule((2, 2))
        r, t = A.refined_bound(d, s, 0.0), A.thm1_bound(d, s, 0.0)
        if r > t + 1e-10:
            bad.append((r, t))
    assert not bad, f"{len(bad)}/20 instances with refined > thm1, e.g. {bad[0]}"


def test_reindexed_refined_dominates(rng):
    for d in random_tables(8, rng) + [PottsChain(2, 4, LN3)]:
        for s in compositions(d.L):
            if s.s_max in (2, 4):
                kl = A.kl_expected_exact(d, optimal(d), s).estimate
                assert kl <= A.refined_bound_reindexed(d, s, 0.0) + 1e-9
                assert A.refined_bound_reindexed(d, s, 0.0) <= A.thm1_bound(d, s, 0.0) + 1e-10


def test_lower_bound_mc():
    d = PottsChain(2, 4, LN3)
    r = A.kl_mc(d, optimal(d), RandomLowerBoundSchedule(4, 2), 100_000, 4)
    assert r.estimate >= A.lower_bound_value(d, 2, 0.0) - 3 * r.stderr


def test_mi_sum_cases(potts_tight):
    assert A.mi_sum(PottsChain(4, 6, 0.0)) == pytest.approx(0, abs=1e-14)
    assert A.mi_sum(potts_tight) == pytest.approx(2 * I_TIGHT, abs=1e-12)
    big = PottsChain(10, 100, 2.0)
    window = PottsChain(10, 3, 2.0).tabular
    edge = PottsChain(10, 2, 2.0).tabular
    reduced = 2 * edge.mi_token_rest(0) + 98 * window.mi_token_rest(1)
    assert A.mi_sum(big) > 0
    assert abs(A.mi_sum(big) - reduced) < 1e-9


def test_bound_report_fields(potts_tight):
    b = A.bound_report(potts_tight, MaskSchedule((2,)), 0.0)
    assert b.refined_applicable and b.C1 == 1
    assert b.thm1_upper >= b.eps_train and b.lower >= b.eps_train
    b = A.bound_report(PottsChain(2, 6, 1.0), MaskSchedule((3, 3)), 0.1)
    assert not b.refined_applicable and b.refined_upper is None and b.lower is None


def test_ter_gap(rng):
    d = TabularDistribution.random(2, 3, rng)
    zero = A.ter_gap(d, optimal(d), MaskSchedule((1, 1, 1)))
    assert abs(zero.gap_bits) < 1e-12
    s = MaskSchedule((2, 1))
    r = A.ter_gap(d, optimal(d), s)
    assert r.residual < 1e-9
    kl = A.kl_expected_exact(d, optimal(d), s).estimate
    assert r.gap_bits * 3 * math.log(2) <= kl + 1e-9
    u = A.ter_gap(d, perturbed(d, 1.0), MaskSchedule((3,)))
    assert u.gap_bits <= math.log2(2) + 1e-12


def test_ter_gap_mc_close_to_exact():
    d = PottsChain(2, 4, LN3)
    s = MaskSchedule((2, 2))
    exact = A.ter_gap(d, optimal(d), s).gap_bits
    mc = A.ter_gap(d, optimal(d), s, n=4000, rng=1, n_inner=256)
    assert abs(mc.gap_bits - exact) < 4 * mc.stderr + 0.01
