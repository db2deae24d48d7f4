"""Sweeps, bound reports, the brute-force verification suite and single runs.

All outputs are plain data (rows, dicts); :mod:`maskdiff.cli` handles files
and formats.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, fields
from types import SimpleNamespace

import numpy as np
from scipy import stats

from . import analysis
from .config import ExperimentConfig
from .errors import TooLarge
from .predictor import MaskPredictor, training_error
from .sampler import UnmaskPolicy, sample
from .schedule import MaskSchedule, RandomLowerBoundSchedule, is_power_of_two

# estimates below this many standard errors are left out of the log-log fit
FIT_MIN_SNR = 5.0
# per-sample values of an exactly-zero error carry ~1e-16 roundoff
FIT_ABS_FLOOR = 1e-12


@dataclass(frozen=True)
class SweepResultRow:
    K: int
    L: int
    J: float | None
    T: float
    s_max: int
    policy: str
    n_samples: int
    seed: int
    kl_estimate: float
    kl_stderr: float
    mi_sum: float
    eps_train: float
    thm1_upper: float
    corollary_upper: float
    refined_upper: float | None
    lower_bound: float | None


COLUMNS = [f.name for f in fields(SweepResultRow)]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.12g}"
    return str(v)


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in rows:
        w.writerow([_fmt(getattr(r, c)) for c in COLUMNS])
    return buf.getvalue()


def rows_to_json(rows, fit=None) -> str:
    doc = {"rows": [asdict(r) for r in rows]}
    if fit is not None:
        doc["fit"] = fit
    return json.dumps(doc, indent=2, sort_keys=False) + "\n"


def sub_seed(seed: int, stream: int) -> int:
    """Independent 64-bit seed for a numbered sub-experiment."""
    return int(np.random.SeedSequence([seed, stream]).generate_state(1, np.uint64)[0])


# -- training error and bounds for one configured instance ---------------------


def eps_train_for(p: MaskPredictor, d, schedule, n: int, seed: int, threads: int = 1):
    """Exact training error when the instance is enumerable, Monte Carlo otherwise."""
    if isinstance(schedule, MaskSchedule):
        try:
            return training_error(p, d, schedule, "exact")
        except TooLarge:
            pass
    return training_error(p, d, schedule, "mc", n=n, rng=seed, threads=threads)


def _summary(schedule):
    if isinstance(schedule, RandomLowerBoundSchedule):
        T = 4 * schedule.L / (3 * schedule.s_max)
        return SimpleNamespace(L=schedule.L, T=T, s_max=schedule.s_max)
    return schedule


def bounds_for(d, schedule, eps: float) -> analysis.BoundReport:
    return analysis.bound_report(d, _summary(schedule), eps)


def run_point(cfg: ExperimentConfig, threads: int = 1, stream: int = 0) -> SweepResultRow:
    d = cfg.build_distribution()
    p = cfg.build_predictor(d)
    schedule = cfg.build_schedule(d.L)
    seed = sub_seed(cfg.seed, stream)
    kl = analysis.kl_mc(d, p, schedule, cfg.n_samples, seed, policy=cfg.policy, threads=threads)
    eps = eps_train_for(p, d, schedule, cfg.n_samples, sub_seed(seed, 1), threads)
    b = bounds_for(d, schedule, eps.value)
    summ = _summary(schedule)
    return SweepResultRow(
        K=d.K,
        L=d.L,
        J=getattr(d, "J", None),
        T=float(summ.T),
        s_max=int(summ.s_max),
        policy=cfg.policy,
        n_samples=kl.n_samples,
        seed=cfg.seed,
        kl_estimate=kl.estimate,
        kl_stderr=kl.stderr,
        mi_sum=b.mi_sum,
        eps_train=eps.value,
        thm1_upper=b.thm1_upper,
        corollary_upper=b.corollary_upper,
        refined_upper=b.refined_upper,
        lower_bound=b.lower,
    )


def loglog_fit(T, kl, stderr) -> dict:
    T, kl, stderr = map(np.asarray, (T, kl, stderr))
    keep = (kl > FIT_ABS_FLOOR) & (kl >= FIT_MIN_SNR * stderr)
    fit = {
        "kind": "ols ln(kl) ~ ln(T)",
        "used_T": [float(t) for t in T[keep]],
        "excluded_T": [float(t) for t in T[~keep]],
        "slope": None,
        "slope_stderr": None,
        "intercept": None,
        "defined": False,
    }
    if keep.sum() < 2:
        fit["note"] = "fewer than two points above the noise threshold; slope undefined"
        return fit
    res = stats.linregress(np.log(T[keep]), np.log(kl[keep]))
    fit.update(
        slope=float(res.slope),
        slope_stderr=float(res.stderr) if keep.sum() > 2 else None,
        intercept=float(res.intercept),
        defined=True,
    )
    return fit


def sweep_T(cfg: ExperimentConfig, T_list=None, threads: int = 1):
    T_list = list(cfg.T_list if T_list is None else T_list)
    rows = []
    for k, T in enumerate(T_list):
        rows.append(run_point(cfg.with_schedule({"type": "balanced", "T": int(T)}), threads, k))
    fit = loglog_fit([r.T for r in rows], [r.kl_estimate for r in rows], [r.kl_stderr for r in rows])
    return rows, fit


def pearson_fit(x, y) -> dict:
    x, y = np.asarray(x, float), np.asarray(y, float)
    fit = {"kind": "pearson(kl_estimate, mi_sum)", "r": None, "defined": False}
    if len(x) < 2 or np.ptp(x) == 0 or np.ptp(y) == 0:
        fit["note"] = "need at least two distinct points; correlation undefined"
        return fit
    fit.update(r=float(stats.pearsonr(x, y)[0]), defined=True)
    return fit


def sweep_J(cfg: ExperimentConfig, J_list=None, T: int | None = None, threads: int = 1):
    J_list = list(cfg.J_list if J_list is None else J_list)
    if T is not None:
        cfg = cfg.with_schedule({"type": "balanced", "T": int(T)})
    rows = [run_point(cfg.with_J(J), threads, k) for k, J in enumerate(J_list)]
    fit = pearson_fit([r.mi_sum for r in rows], [r.kl_estimate for r in rows])
    return rows, fit


def bounds_report(cfg: ExperimentConfig, threads: int = 1) -> dict:
    d = cfg.build_distribution()
    p = cfg.build_predictor(d)
    schedule = cfg.build_schedule(d.L)
    eps = eps_train_for(p, d, schedule, cfg.n_samples, sub_seed(cfg.seed, 1), threads)
    b = bounds_for(d, schedule, eps.value)
    out = {"instance": cfg.to_dict(), **b.to_dict()}
    out["eps_train_method"] = eps.method
    out["eps_train_stderr"] = eps.stderr
    return out


def sample_run(cfg: ExperimentConfig) -> dict:
    d = cfg.build_distribution()
    p = cfg.build_predictor(d)
    schedule = cfg.build_schedule(d.L)
    rng = np.random.default_rng(cfg.seed)
    if isinstance(schedule, RandomLowerBoundSchedule):
        schedule = schedule.draw(rng)
    run = sample(p, schedule, UnmaskPolicy(cfg.policy), rng)
    return {
        "output": [int(v) for v in run.output],
        "schedule": json.loads(schedule.to_json()),
        "trajectory": json.loads(run.trajectory.to_json()),
        "per_step_log_probs": [float(v) for v in run.per_step_log_probs],
        "log_prob": float(run.per_step_log_probs.sum()),
        "log_csv": run.log_csv(),
    }


# -- brute-force verification suite ------------------------------------------

TOL_IDENTITY = 1e-9
TOL_SPLIT = 1e-10
TOL_DOMINANCE = 1e-9


def _instance_spec(d) -> dict:
    if hasattr(d, "J"):
        return {"type": "potts", "K": d.K, "L": d.L, "J": d.J}
    return {"type": "tabular", "K": d.K, "L": d.L, "rows": [[x, p] for x, p in d.to_rows()]}


class _Checks:
    def __init__(self):
        self.groups: dict[str, dict] = {}

    def add(self, name, residual, tol, replay, gating=True):
        g = self.groups.setdefault(
            name, {"name": name, "tolerance": tol, "gating": gating, "n_cases": 0, "n_failed": 0, "max_residual": -math.inf, "failures": []}
        )
        g["n_cases"] += 1
        g["max_residual"] = max(g["max_residual"], float(residual))
        if not residual <= tol:
            g["n_failed"] += 1
            if len(g["failures"]) < 5:
                g["failures"].append({"residual": float(residual), **replay})

    def report(self) -> list[dict]:
        out = []
        for g in self.groups.values():
            out.append({**g, "passed": g["n_failed"] == 0})
        return out


def _verify_instances(scope: str, rng):
    from .oracle import PottsChain, TabularDistribution

    out = []
    for k in range(20):
        out.append(TabularDistribution.random(2, 2 + k % 3, rng))
    out += [PottsChain(2, L, math.log(3)) for L in (2, 3, 4)]
    if scope == "full":
        out += [TabularDistribution.random(3, 5, rng) for _ in range(3)]
        out.append(PottsChain(3, 5, 1.0))
    return out


def verify(scope: str = "quick", seed: int = 0, tamper_alpha: float | None = None, *, lower_bound_n: int = 100_000) -> dict:
    """Run the exact identity and bound checks on brute-force instances.

    ``tamper_alpha`` swaps the predictor labelled optimal for a perturbed one
    (fault injection); the decoupling check must then fail.
    """
    from .predictor import optimal, perturbed
    from .schedule import compositions, sample_trajectory

    if scope not in ("quick", "full"):
        raise ValueError(f"unknown scope {scope!r}")
    rng = np.random.default_rng(seed)
    checks = _Checks()
    for d in _verify_instances(scope, rng):
        inst = _instance_spec(d)
        star = optimal(d) if tamper_alpha is None else perturbed(d, tamper_alpha)
        # (label, predictor, claimed training error or None to compute it)
        preds = [("optimal", star, 0.0), ("perturbed-0.1", perturbed(d, 0.1), None), ("perturbed-0.5", perturbed(d, 0.5), None)]
        kl_star_true = {}
        mi = analysis.mi_sum(d)
        for sch in compositions(d.L):
            replay = {"instance": inst, "schedule": list(sch.sizes)}
            kl_true = analysis.kl_expected_exact(d, optimal(d), sch).estimate
            kl_star_true[sch] = kl_true
            checks.add("kl_identity", abs(kl_true - analysis.kl_decomposition_exact(d, sch)), TOL_IDENTITY, replay)
            for label, p, eps in preds:
                if eps is None:
                    eps = training_error(p, d, sch, "exact").value
                kl_p = analysis.kl_expected_exact(d, p, sch).estimate
                rp = {**replay, "predictor": label, "alpha": p.alpha}
                checks.add("thm1_dominance", kl_p - analysis.thm1_bound(d, sch, eps, mi), TOL_DOMINANCE, rp)
                checks.add("decoupling", abs(kl_p - kl_true - eps), TOL_IDENTITY, rp)
            if max(sch.sizes) >= 2:
                traj = sample_trajectory(sch, rng)
                res = analysis.two_batch_identity_check(d, sch, traj, rng)
                checks.add("two_batch_identity", res, TOL_SPLIT, {**replay, "trajectory": json.loads(traj.to_json())})
            if sch.s_max >= 2 and is_power_of_two(sch.s_max):
                ref = analysis.refined_bound(d, sch, 0.0)
                t1 = analysis.thm1_bound(d, sch, 0.0, mi)
                checks.add("refined_dominance", kl_true - ref, TOL_DOMINANCE, replay, gating=False)
                checks.add("refinement_below_thm1", ref - t1, TOL_SPLIT, replay, gating=False)
                checks.add("refined_reindexed_dominance", kl_true - analysis.refined_bound_reindexed(d, sch, 0.0), TOL_DOMINANCE, replay, gating=False)
        one = MaskSchedule((d.L,)) if d.L <= 3 else MaskSchedule((2,) + (1,) * (d.L - 2))
        ter = analysis.ter_gap(d, optimal(d), one)
        checks.add("ter_equality", ter.residual, TOL_IDENTITY, {"instance": inst, "schedule": list(one.sizes)})
        if scope == "full" and d.L >= 4:
            for s_max in (2, 4):
                lbs = RandomLowerBoundSchedule(d.L, s_max) if d.L % (s_max // 2) == 0 and s_max <= d.L else None
                if lbs is None:
                    continue
                est = analysis.kl_mc(d, optimal(d), lbs, lower_bound_n, sub_seed(seed, 7))
                lb = analysis.lower_bound_value(d, s_max, 0.0)
                checks.add("lower_bound", lb - est.estimate - 3 * est.stderr, 0.0, {"instance": inst, "s_max": s_max, "n": lower_bound_n})
    groups = checks.report()
    passed = all(g["passed"] for g in groups if g["gating"])
    return {"scope": scope, "seed": seed, "tamper_alpha": tamper_alpha, "passed": passed, "checks": groups}


def verify_to_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = ["name", "gating", "passed", "n_cases", "n_failed", "max_residual", "tolerance"]
    w.writerow(cols)
    for g in report["checks"]:
        w.writerow([_fmt(g[c]) if isinstance(g[c], float) else g[c] for c in cols])
    return buf.getvalue()
