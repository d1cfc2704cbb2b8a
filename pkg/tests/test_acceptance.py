"""End-to-end acceptance criteria.

Each test records a one-line detail string; the terminal summary prints one
PASS/FAIL line per criterion.
"""
import itertools
import math
from dataclasses import replace
from functools import lru_cache

import numpy as np
import pytest
from scipy.special import expit

from oracles import (
    auc_pairwise,
    average_precision_by_counting,
    brier_exact,
    ece_exact,
    isotonic_bruteforce,
    posterior_target_monte_carlo,
)
from scout.bundle import TriageModel, save_model
from scout.calibration import OACalConfig, oa_cal, oa_cal_scores, pava
from scout.core import CostModel, RerunTrace, bayes_threshold, budget_label, decision_cost
from scout.correction import BetaPrior, build_corrected_training_set, posterior_soft_target
from scout.evaluation import (
    CalibrationSettings,
    CorrectionSettings,
    cost_sweep,
    latency_bench,
    run_protocol,
)
from scout.features import FeatureSchema, HistoryIndex, extract_dataset, extract_features, feature_names
from scout.scoring import train_scorer
from scout.simulator import SimConfig, StressScenario, benchmark_summary, generate_benchmark

pytestmark = pytest.mark.acceptance

SEEDS = (1, 2, 3, 4, 5)
ALL_CANDIDATES = ("Sigmoid", "Isotonic", "Beta", "CalibTree", "BBQLite", "OA-Cal")
CORRECTION = CorrectionSettings(R_observed=3, R_oracle=8, modes=("naive", "posterior_soft"))


@lru_cache(maxsize=None)
def _dataset(seed, rho=None, post=False):
    scenario = None if rho is None else StressScenario.sticky_markov(rho)
    return generate_benchmark(SimConfig(seed=seed, include_post_failure=post), scenario)


@lru_cache(maxsize=None)
def _features(seed, rho=None):
    return extract_dataset(_dataset(seed, rho))


def _correction_rows(seed, rho=None):
    res = run_protocol(_dataset(seed, rho), calibration_cfg=CalibrationSettings(methods=()),
                       correction_cfg=CORRECTION, features=_features(seed, rho))
    return res.rows["naive/uncal"], res.rows["posterior_soft/uncal"]


def test_criterion_01_threshold_algebra(record_property):
    rows = [((1, 8, 0.15), 0.128), ((1, 4, 0.15), 0.230), ((1, 16, 0.15), 0.068), ((1, 8, 0.30), 0.144)]
    got = [round(bayes_threshold(CostModel(*c)), 3) for c, _ in rows]
    record_property("detail", f"tau={got}")
    assert got == [e for _, e in rows]


def test_criterion_02_posterior_soft_closed_form(record_property):
    prior = BetaPrior(0.79, 42.20)
    closed = posterior_soft_target([False] * 3, 8, prior)
    mc = posterior_target_monte_carlo(0.79, 42.20, 3, 8, 10**6, np.random.default_rng(2024))
    record_property("detail", f"closed={closed:.5f} mc={mc:.5f}")
    assert abs(closed - mc) <= 1e-3
    assert posterior_soft_target([False, True, False], 8, prior) == 1.0
    # R' = R is the hard budget label
    ds = _dataset(1)
    soft = build_corrected_training_set(ds, 3, 3)
    assert all(e.target == float(budget_label(r.rerun_trace, 3))
               for e, r in zip(soft, [r for r in ds if r.failed and r.labeled]))


def test_criterion_03_correction_effect(record_property):
    lines = []
    ok = True
    for seed in SEEDS:
        naive, soft = _correction_rows(seed)
        lines.append(f"s{seed}:{naive.ece10:.3f}->{soft.ece10:.3f}/{naive.cost_at_tau:.0f}->{soft.cost_at_tau:.0f}")
        ok &= soft.ece10 <= naive.ece10 / 3 and soft.cost_at_tau < naive.cost_at_tau
    record_property("detail", "ECE/cost " + " ".join(lines))
    assert ok


def test_criterion_04_stress_robustness(record_property):
    worst_soft, best_naive = 0.0, 1.0
    for rho in (0.0, 0.3, 0.6):
        for seed in SEEDS:
            naive, soft = _correction_rows(seed, rho)
            worst_soft = max(worst_soft, soft.ece10)
            best_naive = min(best_naive, naive.ece10)
    record_property("detail", f"max soft ECE={worst_soft:.3f} min naive ECE={best_naive:.3f}")
    assert worst_soft < 0.10
    assert best_naive > 0.20


def test_criterion_05_calibration_portability(record_property):
    costs = {m: [] for m in ("uncal",) + ALL_CANDIDATES}
    for seed in SEEDS:
        res = run_protocol(_dataset(seed), calibration_cfg=CalibrationSettings(
            methods=ALL_CANDIDATES, oa=OACalConfig(seed=seed)), features=_features(seed))
        for m in costs:
            costs[m].append(res.rows[f"naive/{'oa_cal' if m == 'OA-Cal' else m}"].cost_at_tau)
    mean = {m: float(np.mean(v)) for m, v in costs.items()}
    reductions = {m: 1 - mean[m] / mean["uncal"] for m in ("Sigmoid", "Isotonic", "Beta", "OA-Cal")}
    best_single = min(mean[m] for m in ALL_CANDIDATES if m != "OA-Cal")
    gap = mean["OA-Cal"] / best_single - 1
    record_property("detail", "reduction " + " ".join(f"{m}={r:.1%}" for m, r in reductions.items())
                    + f" OA-Cal gap={gap:+.2%}")
    assert all(r >= 0.15 for r in reductions.values())
    assert gap <= 0.02


def test_criterion_06_gate_ablation_direction(record_property):
    cost = CostModel()
    gated, forced = [], []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        n = 600
        s_src, s_tgt = rng.beta(2, 10, n), rng.beta(10, 2, n)

        def draw(s):
            return (rng.random(s.size) < expit(1.3 * np.log(s / (1 - s)) - 0.8)).astype(float)

        t_src, y_tgt = draw(s_src), draw(s_tgt)
        for cfg, sink in ((OACalConfig(), gated), (OACalConfig(force_weighting=True), forced)):
            cal, _ = oa_cal_scores(s_src, t_src, s_tgt, cost, cfg)
            sink.append(decision_cost(p=cal.predict(s_tgt), y=y_tgt, cost=cost))
    record_property("detail", f"gated={np.mean(gated):.1f} forced={np.mean(forced):.1f}")
    assert np.mean(forced) >= np.mean(gated)


def test_criterion_07_cost_dominance(record_property):
    uncal_wins = 0
    wins_total = {}
    for seed in SEEDS:
        res = run_protocol(_dataset(seed), calibration_cfg=CalibrationSettings(oa=OACalConfig(seed=seed)),
                           features=_features(seed))
        # uncalibrated first, so it also wins exact ties
        preds = {"naive/uncal": res.predictions["naive/uncal"]}
        preds.update({k: v for k, v in res.predictions.items() if k != "naive/uncal"})
        wins = cost_sweep(preds, res.y_eval).wins()
        uncal_wins += wins["naive/uncal"]
        for k, v in wins.items():
            wins_total[k] = wins_total.get(k, 0) + v
    record_property("detail", f"wins over 5 seeds {wins_total}")
    assert uncal_wins == 0


def _ulps(got, exact):
    """Distance in units of last place from the exactly rounded value."""
    if exact == 0:
        return 0.0 if got == 0 else float("inf")
    return abs(got - exact) / math.ulp(exact)


def test_criterion_08_metric_oracles(record_property):
    from scout.metrics import brier, ece10, pr_auc, roc_auc
    grid = (0.05, 0.5, 1.0)
    n_checked = 0
    worst_ulp = worst_auc = 0.0
    for n in range(1, 7):
        for scores in itertools.product(grid, repeat=n):
            for labels in itertools.product((0, 1), repeat=n):
                # the oracles are exact rationals over the float inputs; agreement is
                # required up to the rounding of the final float result
                worst_ulp = max(worst_ulp, _ulps(ece10(scores, labels), float(ece_exact(scores, labels))),
                                _ulps(brier(scores, labels), float(brier_exact(scores, labels))))
                if 0 < sum(labels) < n:
                    worst_auc = max(worst_auc, abs(roc_auc(scores, labels) - auc_pairwise(scores, labels)),
                                    abs(pr_auc(scores, labels) - average_precision_by_counting(scores, labels)))
                n_checked += 1
    record_property("detail", f"{n_checked} lists, ECE/Brier within {worst_ulp:.0f} ulp of exact, "
                              f"max AUC deviation {worst_auc:.1e}")
    assert worst_ulp <= 4
    assert worst_auc <= 1e-9


def test_criterion_09_isotonic_oracle(record_property):
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 9))
        y = rng.random(n)
        w = rng.uniform(0.1, 5.0, n)
        worst = max(worst, float(np.max(np.abs(pava(y, w) - isotonic_bruteforce(y, w)))))
    record_property("detail", f"max deviation {worst:.1e} over 200 instances")
    assert worst <= 1e-6


def test_criterion_10_leakage_guards(record_property):
    leaky = _dataset(1, post=True)
    clean = _dataset(1)
    hist = HistoryIndex.from_runs(leaky)
    n_pre = len(feature_names())
    failed = [(a, b) for a, b in zip(clean, leaky) if a.failed]
    idx = np.random.default_rng(0).choice(len(failed), 150, replace=False)
    for i in idx:
        run_clean, run_leaky = failed[i]
        full = extract_features(run_leaky, hist, "leakage_ablation")
        # deleting post-failure samples and every run that starts later
        earlier = HistoryIndex.from_runs([r for r in leaky if r.start_time < run_leaky.start_time])
        stripped = extract_features(run_clean, earlier)
        assert full.dense[:n_pre].tobytes() == stripped.dense.tobytes()
        assert full.missingness[:n_pre].tobytes() == stripped.missingness.tobytes()
        assert full.names[:n_pre] == stripped.names
        assert len(full.names) > n_pre

    fvs = _features(1)
    by_id = {r.run_id: r for r in clean}
    labels = [float(budget_label(by_id[fv.run_id].rerun_trace, 8)) for fv in fvs]
    scorer = train_scorer(list(zip(fvs[:2000], labels[:2000])))
    target_runs = [by_id[fv.run_id] for fv in fvs[2800:]]
    rng = np.random.default_rng(1)
    tampered = [replace(r, rerun_trace=RerunTrace(tuple(rng.random(8) < 0.5))) for r in target_runs]
    hist_clean = HistoryIndex.from_runs(clean)
    outs = []
    for runs in (target_runs, tampered):
        tgt = [extract_features(r, hist_clean) for r in runs]
        cal, rep = oa_cal(scorer, list(zip(fvs[2000:2800], labels[2000:2800])), tgt, CostModel())
        outs.append((cal.to_dict(), rep.to_dict()))
    assert outs[0] == outs[1]
    record_property("detail", "150 runs bit-identical after deletion; oa_cal unchanged under tampering")


def test_criterion_11_latency(record_property, tmp_path):
    res = run_protocol(_dataset(1), features=_features(1))
    fitted = res.models[0]
    path = save_model(TriageModel(fitted.scorer, fitted.calibrators["oa_cal"]), tmp_path / "model.json")
    rep = latency_bench(path, _dataset(1), n_iters=10_000)
    record_property("detail", f"end-to-end P95={rep.end_to_end.p95_us:.0f}us inference P95={rep.inference.p95_us:.1f}us")
    assert rep.end_to_end.p95_us <= 5000
    assert rep.inference.p95_us <= 100


def test_criterion_12_benchmark_shape(record_property):
    shares = [benchmark_summary(_dataset(seed))["flaky_share"] for seed in SEEDS]
    n_dense = FeatureSchema().manifest()["n_dense"]
    record_property("detail", f"flaky share {[round(s, 4) for s in shares]}, {n_dense} dense features")
    assert all(abs(s - 0.1255) <= 0.03 for s in shares)
    assert n_dense == 62
