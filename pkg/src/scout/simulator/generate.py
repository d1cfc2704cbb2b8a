"""Seeded generator for the synthetic distributed-database CI benchmark."""
from __future__ import annotations

import dataclasses
from typing import Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit

from ..core import RerunTrace
from . import model as m
from .model import (
    FaultFamily,
    FaultSpec,
    RunRecord,
    ScenarioKind,
    SimConfig,
    StressScenario,
    TELEMETRY_FAMILIES,
)

INTERARRIVAL_SECONDS = 30.0
_RERUN_STREAM = 0x5EED
_FAMILY_ORDER = tuple(FaultFamily)


class InfeasibleTargetError(ValueError):
    """The requested failure rate or flaky share cannot be produced."""


def simulate_reruns(q: float, R: int, scenario: StressScenario, rng: np.random.Generator) -> RerunTrace:
    """Draw ``R`` rerun outcomes for a run whose per-attempt pass probability is ``q``.

    Every attempt is recorded, even after the first pass, so that shorter
    budgets can be derived later by truncation.
    """
    if not 0.0 < q < 1.0:
        raise ValueError(f"q must lie in (0, 1), got {q}")
    kind = scenario.kind
    u = rng.random(R)
    out = np.empty(R, dtype=bool)

    if kind in (ScenarioKind.IID, ScenarioKind.SELECTIVE_LABELING):
        out[:] = u < q
    elif kind is ScenarioKind.STICKY_MARKOV:
        repeat = rng.random(R) < scenario.rho
        out[0] = u[0] < q
        for j in range(1, R):
            out[j] = out[j - 1] if repeat[j] else u[j] < q
    elif kind in (ScenarioKind.COOLDOWN, ScenarioKind.CONTENTION):
        sign = 1.0 if kind is ScenarioKind.COOLDOWN else -1.0
        qj = np.clip(q + sign * scenario.gamma * np.arange(R), 0.0, 1.0)
        out[:] = u < qj
    elif kind is ScenarioKind.INTERVENTION:
        qj = np.full(R, q)
        if rng.random() < scenario.p:
            qj[1:] = min(1.0, max(0.0, q + scenario.delta))
        out[:] = u < qj
    elif kind is ScenarioKind.WARM_CACHE:
        warm = rng.random() < scenario.p
        qw = min(1.0, max(0.0, q + scenario.delta)) if warm else q
        out[:] = u < qw
    else:  # pragma: no cover
        raise ValueError(f"unknown scenario {kind}")
    return RerunTrace(tuple(out.tolist()))


def _solve_intercept(objective, name: str, target: float, lo=-15.0, hi=15.0) -> float:
    f_lo, f_hi = objective(lo), objective(hi)
    if f_lo * f_hi > 0:
        # closest achievable value decides whether we are within tolerance
        best = lo if abs(f_lo) < abs(f_hi) else hi
        achieved = objective(best) + target
        if abs(achieved - target) > 0.05:
            raise InfeasibleTargetError(
                f"{name}={target:.4f} is infeasible: closest achievable value is {achieved:.4f}"
            )
        return best
    return brentq(objective, lo, hi, xtol=1e-10)


def _lookup(table: dict, keys: Sequence, default=(0.0, 0.0)) -> np.ndarray:
    return np.array([table.get(k, default) for k in keys], dtype=float).reshape(len(keys), -1)


def generate_benchmark(config: SimConfig | None = None, scenario: StressScenario | None = None) -> list[RunRecord]:
    """Generate the benchmark dataset, ordered by run index (and start time).

    Context and latent drivers depend only on ``config``; the scenario only
    changes rerun outcomes (and masking for selective labeling), so datasets
    generated with the same seed under different scenarios share every
    primary run and its telemetry.
    """
    config = config or SimConfig()
    scenario = scenario or StressScenario()
    n = config.n_primary_runs
    R = config.rerun_budget
    S = config.severity_levels
    seed = int(config.seed)
    ctx_ss, lat_ss, out_ss, tel_ss, mask_ss = np.random.SeedSequence(seed).spawn(5)

    # -- context ------------------------------------------------------------
    rng = np.random.default_rng(ctx_ss)
    tests = rng.integers(0, config.n_test_identities, n)
    commit_base = (np.arange(n) * config.n_commits) // n
    commits = np.minimum(config.n_commits - 1, commit_base + rng.integers(0, 3, n))
    wl_idx = rng.integers(0, len(config.workload_types), n)
    ver_idx = rng.integers(0, len(config.versions), n)
    runner_idx = rng.integers(0, len(m.RUNNER_POOLS), n)
    trigger_idx = rng.integers(0, len(m.TRIGGERS), n)
    start = np.arange(n) * INTERARRIVAL_SECONDS + rng.uniform(0, 0.9 * INTERARRIVAL_SECONDS, n)
    test_duration = rng.lognormal(np.log(300.0), 0.4, config.n_test_identities)
    duration = test_duration[tests] * rng.lognormal(0.0, 0.15, n)

    workloads = [config.workload_types[i] for i in wl_idx]
    versions = [config.versions[i] for i in ver_idx]
    lineages = [m.version_lineage(v) for v in versions]
    suites = tests % m.N_SUITES

    # -- latent drivers -----------------------------------------------------
    rng = np.random.default_rng(lat_ss)
    suite_q = rng.normal(0.0, m.SUITE_Q_SPREAD, m.N_SUITES)
    md = config.persistent_defect_rate
    if md > 0:
        propensity = rng.beta(2.0, 2.0 * (1.0 - md) / md, config.n_test_identities)
    else:
        propensity = np.zeros(config.n_test_identities)
    defect_table = rng.random((config.n_test_identities, config.n_commits)) < propensity[:, None]
    defect = defect_table[tests, commits]
    runner_shift = np.array([m.RUNNER_CONTENTION[m.RUNNER_POOLS[i]] for i in runner_idx])
    z = rng.normal(size=n) + runner_shift
    mix = np.array([config.fault_mix.get(f.value, 0.0) for f in _FAMILY_ORDER])
    fam_idx = rng.choice(len(_FAMILY_ORDER), size=n, p=mix / mix.sum())
    sev = rng.integers(1, S + 1, n)
    sev[np.array([_FAMILY_ORDER[i] is FaultFamily.NO_FAULT for i in fam_idx])] = 0
    eps_q = rng.normal(0.0, m.Q_LOGIT_NOISE, n)
    faults = [FaultSpec(_FAMILY_ORDER[f], int(s)) for f, s in zip(fam_idx, sev)]

    wl_logits = _lookup(m.WORKLOAD_LOGITS, workloads)
    ver_logits = _lookup(m.VERSION_LOGITS, lineages)
    lin_fail = (
        np.array([m.failure_logit_offset(f, S) for f in faults])
        + wl_logits[:, 0] + ver_logits[:, 0] + m.CONTENTION_FAIL_SLOPE * z
    )
    lin_q = (
        np.array([m.q_logit_offset(f, S) for f in faults])
        + wl_logits[:, 1] + ver_logits[:, 1] + m.CONTENTION_Q_SLOPE * z
        + suite_q[suites] + eps_q
    )

    def p_fail_of(f0):
        return np.where(defect, m.DEFECT_FAILURE_PROB, expit(f0 + lin_fail))

    f0 = _solve_intercept(
        lambda f0: p_fail_of(f0).mean() - config.target_failure_rate,
        "target_failure_rate", config.target_failure_rate,
    )
    p_fail = p_fail_of(f0)

    def q_of(q0):
        return np.where(defect, m.DEFECT_Q, expit(q0 + lin_q))

    def flaky_share(q0):
        q = q_of(q0)
        return float(np.sum(p_fail * (1.0 - (1.0 - q) ** R)) / np.sum(p_fail))

    q0 = _solve_intercept(
        lambda q0: flaky_share(q0) - config.target_flaky_share,
        "target_flaky_share", config.target_flaky_share,
    )
    q = np.clip(q_of(q0), 1e-9, 1.0 - 1e-9)

    # -- primary outcomes ---------------------------------------------------
    rng = np.random.default_rng(out_ss)
    failed = rng.random(n) < p_fail
    failure_frac = rng.uniform(0.4, 1.0, n)

    # -- telemetry for failed runs -------------------------------------------
    rng = np.random.default_rng(tel_ss)
    fidx = np.flatnonzero(failed)
    nf, F, T = len(fidx), len(TELEMETRY_FAMILIES), config.timesteps_per_window
    base_mean = np.array([m.BASELINE[f][0] for f in TELEMETRY_FAMILIES])
    base_scale = np.array([m.BASELINE[f][1] for f in TELEMETRY_FAMILIES])
    mult = np.ones((nf, F))
    fault_eff = np.zeros((nf, F))
    static = np.zeros((nf, F))
    horizon = max(n - 1, 1)
    for row, i in enumerate(fidx):
        wl_mult = m.WORKLOAD_TELEMETRY.get(workloads[i], {})
        ver_mult = m.VERSION_TELEMETRY.get(lineages[i], {})
        for c, fam in enumerate(TELEMETRY_FAMILIES):
            mult[row, c] = wl_mult.get(fam, 1.0) * ver_mult.get(fam, 1.0)
            fault_eff[row, c] = m.fault_shift(faults[i], fam, S)
            static[row, c] = (
                m.CONTENTION_LOADINGS.get(fam, 0.0) * z[i]
                + (m.DEFECT_SIGNATURE.get(fam, 0.0) if defect[i] else 0.0)
                + m.DRIFT_LOADINGS.get(fam, 0.0) * config.drift * i / horizon
            )
    ramp = (np.arange(T) + 1.0) / T
    noise = rng.normal(size=(nf, F, T))
    level = (base_mean * mult)[:, :, None]
    shift = fault_eff[:, :, None] * ramp[None, None, :] + static[:, :, None]
    values = np.maximum(level + base_scale[None, :, None] * (noise + shift), 0.0)
    values = np.round(values, 6)
    drop = rng.random((nf, F, T)) < config.missing_rate
    post_noise = rng.normal(size=(nf, F))
    post_values = np.round(
        np.maximum(level[:, :, 0] + base_scale[None, :] * (post_noise + fault_eff + static), 0.0), 6
    )
    offsets = config.telemetry_offsets

    telemetry_by_run: dict[int, dict] = {}
    for row, i in enumerate(fidx):
        tel = {}
        for c, fam in enumerate(TELEMETRY_FAMILIES):
            samples = [
                (offsets[k], float(values[row, c, k])) for k in range(T) if not drop[row, c, k]
            ]
            if config.include_post_failure:
                samples.append((m.POST_FAILURE_OFFSET, float(post_values[row, c])))
            tel[fam] = tuple(samples)
        telemetry_by_run[int(i)] = tel

    # -- assemble -----------------------------------------------------------
    records = []
    for i in range(n):
        is_failed = bool(failed[i])
        trace = None
        if is_failed:
            rrng = np.random.default_rng([seed, _RERUN_STREAM, i])
            trace = simulate_reruns(float(q[i]), R, scenario, rrng)
        test_id = f"t{tests[i]:04d}"
        commit_id = f"c{commits[i]:04d}"
        tokens = (
            f"workload={workloads[i]}",
            f"version={versions[i]}",
            f"suite=s{suites[i]:02d}",
            f"runner={m.RUNNER_POOLS[runner_idx[i]]}",
            f"trigger={m.TRIGGERS[trigger_idx[i]]}",
            f"test_id={test_id}",
            f"commit_id={commit_id}",
        )
        start_i = round(float(start[i]), 3)
        dur_i = round(float(duration[i]), 3)
        records.append(
            RunRecord(
                run_id=f"r{i:06d}",
                test_id=test_id,
                commit_id=commit_id,
                workload=workloads[i],
                version=versions[i],
                start_time=start_i,
                duration=dur_i,
                failure_time=round(start_i + dur_i * float(failure_frac[i]), 3) if is_failed else None,
                telemetry=telemetry_by_run.get(i, {}),
                metadata_tokens=tokens,
                rerun_trace=trace,
                fault=faults[i],
                latent_q=float(q[i]),
                persistent_defect=bool(defect[i]),
            )
        )

    if scenario.kind is ScenarioKind.SELECTIVE_LABELING and scenario.level != "none":
        records = apply_selective_labeling(records, scenario.level, seed=int(mask_ss.generate_state(1)[0]))
    return records


def apply_selective_labeling(dataset: Sequence[RunRecord], level: str, seed: int = 0) -> list[RunRecord]:
    """Mask rerun traces of a fault-family-correlated subset of failed runs.

    Masked runs keep their telemetry but lose their labels.  The overall
    masked fraction among labeled failures is about 20% (``mild``) or 50%
    (``strong``), with per-family rates proportional to
    ``SELECTION_MULTIPLIERS``.
    """
    if level not in m.SELECTION_RATES:
        raise ValueError(f"unknown selection level {level!r}")
    rate = m.SELECTION_RATES[level]
    if rate == 0.0:
        return list(dataset)
    labeled = [r for r in dataset if r.labeled]
    if not labeled:
        return list(dataset)
    mean_mult = np.mean([m.SELECTION_MULTIPLIERS[r.fault.family] for r in labeled])
    rng = np.random.default_rng(seed)
    out = []
    for r in dataset:
        if r.labeled:
            p_mask = min(1.0, rate * m.SELECTION_MULTIPLIERS[r.fault.family] / mean_mult)
            if rng.random() < p_mask:
                r = dataclasses.replace(r, rerun_trace=None)
        out.append(r)
    return out


def benchmark_summary(dataset: Sequence[RunRecord], R: int | None = None) -> dict:
    """Counts and rates used in generation reports."""
    n = len(dataset)
    failed = [r for r in dataset if r.failed]
    labeled = [r for r in failed if r.labeled]
    R = R or (labeled[0].rerun_trace.budget_used if labeled else 0)
    flaky = sum(1 for r in labeled if any(r.rerun_trace.outcomes[:R]))
    return {
        "n_runs": n,
        "n_failed": len(failed),
        "n_labeled": len(labeled),
        "n_flaky": flaky,
        "failure_rate": len(failed) / n if n else 0.0,
        "flaky_share": flaky / len(labeled) if labeled else 0.0,
        "rerun_budget": R,
    }
