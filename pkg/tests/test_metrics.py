import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import auc_pairwise, average_precision_by_counting, brier_exact, ece_exact
from scout.core import CostModel
from scout.metrics import brier, ece10, metric_report, pr_auc, roc_auc

GRID = (0.05, 0.5, 1.0)


def _all_lists(max_size=6):
    for n in range(1, max_size + 1):
        for scores in itertools.product(GRID, repeat=n):
            for labels in itertools.product((0, 1), repeat=n):
                yield list(scores), list(labels)


def test_hand_examples():
    assert ece10([0.05, 0.05], [0, 1]) == pytest.approx(0.45)
    assert brier([1.0, 0.0], [1, 1]) == pytest.approx(0.5)
    assert roc_auc([0.1, 0.9], [0, 1]) == 1.0
    assert roc_auc([0.5, 0.5], [0, 1]) == 0.5
    assert pr_auc([0.9, 0.8, 0.7], [1, 0, 1]) == pytest.approx((1 + 2 / 3) / 2)
    # p = 1 falls in the top bin
    assert ece10([1.0], [1]) == 0.0


def test_pairs_and_arrays_agree():
    p, y = [0.2, 0.7, 0.9], [0, 1, 1]
    assert brier(list(zip(p, y))) == brier(p, y)
    assert roc_auc(list(zip(p, y))) == roc_auc(p, y)


def test_exhaustive_against_oracles():
    for p, y in _all_lists():
        # float arithmetic on the grid reproduces the exact rational value to rounding
        assert ece10(p, y) == pytest.approx(float(ece_exact(p, y)), abs=1e-12)
        assert brier(p, y) == pytest.approx(float(brier_exact(p, y)), abs=1e-12)
        if 0 < sum(y) < len(y):
            assert abs(roc_auc(p, y) - auc_pairwise(p, y)) <= 1e-9
            assert abs(pr_auc(p, y) - average_precision_by_counting(p, y)) <= 1e-9


def test_ranking_metrics_need_both_classes():
    with pytest.raises(ValueError):
        roc_auc([0.1, 0.2], [1, 1])
    with pytest.raises(ValueError):
        pr_auc([0.1, 0.2], [0.5, 1])
    with pytest.raises(ValueError):
        brier([], [])


@given(st.lists(st.tuples(st.floats(0, 1), st.sampled_from([0, 1])), min_size=2, max_size=40))
def test_bounds(pairs):
    p, y = zip(*pairs)
    assert 0 <= ece10(p, y) <= 1
    assert 0 <= brier(p, y) <= 1
    if 0 < sum(y) < len(y):
        assert 0 <= roc_auc(p, y) <= 1
        assert 0 < pr_auc(p, y) <= 1


@given(st.lists(st.integers(0, 100), min_size=4, max_size=30), st.integers(0, 2**31))
def test_auc_invariant_to_monotone_transform(p, seed):
    y = np.random.default_rng(seed).integers(0, 2, len(p))
    if 0 < y.sum() < len(y):
        p = np.asarray(p) / 100
        assert roc_auc(p**3, y) == pytest.approx(roc_auc(p, y))


def test_metric_report_fields():
    rep = metric_report([0.9, 0.05, 0.5, 0.01], [0, 1, 1, 0], CostModel())
    assert rep.cost_at_tau == pytest.approx(1.15 + 8 + 0.15)
    assert rep.auto_rate == 0.5
    assert rep.n == 4 and rep.positives == 2
    assert round(rep.tau, 3) == 0.128
    assert set(rep.to_dict()) >= {"ece10", "brier", "pr_auc", "roc_auc"}


def test_exact_oracle_is_rational():
    assert ece_exact([Fraction(1, 20)] * 2, [0, 1]) == Fraction(9, 20)


def test_listed_examples():
    assert ece10([(0.1, 0), (0.9, 1)]) == pytest.approx(0.1)
    eps = 1e-4
    assert ece10([(1 - eps, 1), (eps, 0)]) == pytest.approx(eps)
    assert brier([0.5] * 4, [0, 1, 1, 0]) == 0.25
    assert brier([1.0, 0.0], [1, 0]) == 0.0
    assert brier([(0.2, 0), (0.6, 1)]) == pytest.approx(0.10)
    assert roc_auc([0.9, 0.8, 0.3, 0.2], [1, 0, 1, 0]) == 0.75
    assert roc_auc([0.9, 0.8, 0.1], [1, 1, 0]) == pr_auc([0.9, 0.8, 0.1], [1, 1, 0]) == 1.0


def test_random_scores_have_chance_auc():
    rng = np.random.default_rng(0)
    y = np.repeat([0, 1], 5000)
    assert roc_auc(rng.random(10000), y) == pytest.approx(0.5, abs=0.02)
