import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from scout.core import (
    CostModel,
    Decision,
    LabeledExample,
    RerunTrace,
    bayes_threshold,
    budget_label,
    decide,
    decision_cost,
    mean_decision_cost,
    per_run_costs,
)


@pytest.mark.parametrize(
    "c_fn, c_auto, expected",
    [(8, 0.15, 0.128), (4, 0.15, 0.230), (16, 0.15, 0.068), (8, 0.30, 0.144)],
)
def test_threshold_matches_reference_rows(c_fn, c_auto, expected):
    assert round(bayes_threshold(CostModel(1.0, c_fn, c_auto)), 3) == expected


def test_threshold_clamps_when_rerun_overhead_dominates():
    assert bayes_threshold(CostModel(c_fp=1, c_fn=0.5, c_auto=2)) == 1.0


def test_cost_model_rejects_bad_values():
    with pytest.raises(ValueError):
        CostModel(c_fp=-1)
    with pytest.raises(ValueError):
        CostModel(c_fn=float("nan"))
    with pytest.raises(ValueError):
        CostModel(c_fp=0, c_fn=0, c_auto=0)


@given(st.floats(0, 50), st.floats(0.01, 50), st.floats(0, 5))
def test_threshold_is_the_indifference_point(c_fp, c_fn, c_auto):
    cost = CostModel(c_fp, c_fn, c_auto)
    tau = bayes_threshold(cost)
    assert 0.0 <= tau <= 1.0
    raw = (c_auto + c_fp) / (c_fp + c_fn)
    if raw <= 1:
        # expected costs of the two actions coincide at tau
        rerun = c_auto + (1 - tau) * c_fp
        escalate = tau * c_fn
        assert math.isclose(rerun, escalate, rel_tol=1e-9, abs_tol=1e-9)


def test_decide_boundary_reruns():
    assert decide(0.3, 0.3) is Decision.RERUN
    assert decide(0.2999, 0.3) is Decision.ESCALATE


def test_budget_label_truncates_prefix():
    tr = RerunTrace.from_string("FFPF")
    assert budget_label(tr, 2) == 0
    assert budget_label(tr, 3) == 1
    with pytest.raises(ValueError):
        budget_label(tr, 5)
    with pytest.raises(ValueError):
        budget_label(tr, 0)


def test_trace_string_roundtrip():
    tr = RerunTrace((False, True, True))
    assert RerunTrace.from_string(tr.to_string()) == tr
    assert tr.passes() == 2


def test_decision_cost_hand_example():
    cost = CostModel(1, 8, 0.15)
    # rerun a persistent (1.15), escalate a flaky (8), rerun a flaky (0.15), escalate a persistent (0)
    pairs = [(0.9, 0), (0.05, 1), (0.5, 1), (0.01, 0)]
    assert decision_cost(pairs, cost) == pytest.approx(1.15 + 8 + 0.15)
    assert mean_decision_cost([p for p, _ in pairs], [y for _, y in pairs], cost) == pytest.approx(9.3 / 4)


def test_soft_target_cost_is_expectation():
    cost = CostModel()
    tau = cost.tau
    c_soft = per_run_costs([0.9], [0.25], cost, tau)[0]
    c_hard = 0.25 * per_run_costs([0.9], [1], cost, tau)[0] + 0.75 * per_run_costs([0.9], [0], cost, tau)[0]
    assert c_soft == pytest.approx(c_hard)


def test_labeled_example_validates():
    with pytest.raises(ValueError):
        LabeledExample("r", 1.2)
    with pytest.raises(ValueError):
        LabeledExample("r", 0.5, weight=0)


@given(st.lists(st.tuples(st.floats(0, 1), st.sampled_from([0, 1])), min_size=1, max_size=30))
def test_cost_is_nonnegative_and_weights_scale(pairs):
    cost = CostModel()
    c = decision_cost(pairs, cost)
    assert c >= 0
    w = np.full(len(pairs), 2.0)
    assert decision_cost(p=[a for a, _ in pairs], y=[b for _, b in pairs], cost=cost, weights=w) == pytest.approx(2 * c)
