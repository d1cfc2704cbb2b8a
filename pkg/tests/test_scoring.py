import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scout.features import FeatureVector
from scout.scoring import (
    Scorer,
    ScorerConfig,
    ScorerVariant,
    SchemaMismatchError,
    Standardizer,
    TfidfVocabulary,
    score,
    score_many,
    train_scorer,
    vectorize_tokens,
)


def _fv(dense, tokens=(), run_id="r", schema="toy", names=None):
    dense = np.asarray(dense, dtype=float)
    names = names or tuple(f"x{i}" for i in range(dense.size))
    return FeatureVector(run_id, names, dense, dense.copy(), tuple(tokens),
                         np.zeros(dense.size), schema_hash=schema)


def _toy(n=80, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 2))
    y = (X[:, 0] + 0.5 * X[:, 1] > 0).astype(float)
    X[y == 1] += 0.5
    return [(_fv(x, run_id=f"r{i}"), t) for i, (x, t) in enumerate(zip(X, y))]


def _mk_scorer(w, b=0.0):
    w = np.asarray(w, dtype=float)
    return Scorer(ScorerVariant.STATE, w, b, "toy", Standardizer(np.zeros(w.size), np.ones(w.size)))


def test_separable_training_accuracy():
    data = _toy()
    s = train_scorer(data, config=ScorerConfig(l2=1e-6))
    p = score_many(s, [fv for fv, _ in data])
    assert np.all((p >= 0.5) == np.array([t for _, t in data], dtype=bool))


@pytest.mark.parametrize("class_weight", [None, "balanced"])
def test_duplicated_half_weights_match_original(class_weight):
    data = _toy(60, 1)
    cfg = ScorerConfig(class_weight=class_weight)
    a = train_scorer(data, config=cfg)
    b = train_scorer([(fv, t, 0.5) for fv, t in data for _ in range(2)], config=cfg)
    assert np.allclose(a.weights, b.weights, atol=1e-6)
    assert a.intercept == pytest.approx(b.intercept, abs=1e-6)


def test_soft_constant_target_recovers_base_rate():
    data = [(_fv([1.0], run_id=f"r{i}"), 0.3) for i in range(200)]
    s = train_scorer(data, config=ScorerConfig(l2=1e-8))
    assert abs(score(s, data[0][0]) - 0.3) < 1e-3
    assert s.intercept == pytest.approx(math.log(0.3 / 0.7), abs=1e-3)


def test_scoring_examples():
    assert score(_mk_scorer([0, 0]), _fv([3, -1])) == 0.5
    assert round(score(_mk_scorer([1.0]), _fv([2.0])), 5) == 0.88080


def test_schema_mismatch_raises():
    with pytest.raises(SchemaMismatchError):
        score(_mk_scorer([1.0]), _fv([2.0], schema="other"))
    data = _toy(20)
    data[0] = (_fv([0, 0], schema="other"), data[0][1])
    with pytest.raises(SchemaMismatchError):
        train_scorer(data)


def test_training_errors():
    with pytest.raises(ValueError):
        train_scorer([(_fv([1.0]), 1.0), (_fv([2.0]), 1.0)])
    with pytest.raises(ValueError):
        train_scorer([(_fv([np.nan]), 1.0), (_fv([2.0]), 0.0)])
    with pytest.raises(ValueError):
        train_scorer([])
    with pytest.raises(ValueError):
        ScorerConfig(class_weight="other")


def test_tfidf_vectors():
    vocab = TfidfVocabulary.fit([["a=1", "b=2"], ["a=1"], ["c=3"]])
    assert not vectorize_tokens(vocab, []).any()
    assert not vectorize_tokens(vocab, ["zzz=0"]).any()
    v = vectorize_tokens(vocab, ["b=2"])
    assert np.linalg.norm(v) == pytest.approx(1.0)
    assert np.count_nonzero(v) == 1
    # idf = ln((1+N)/(1+df)) + 1
    both = vectorize_tokens(vocab, ["a=1", "b=2"])
    ia, ib = math.log(4 / 3) + 1, math.log(4 / 2) + 1
    assert sorted(both[both > 0]) == pytest.approx(sorted(np.array([ia, ib]) / math.hypot(ia, ib)))


def test_sdj_empty_tokens_equal_zero_sparse_channel(small_features):
    data = [(fv, float(i % 3 == 0)) for i, fv in enumerate(small_features[:300])]
    s = train_scorer(data, ScorerVariant.SDJ)
    from dataclasses import replace
    fv = replace(small_features[5], sparse_tokens=())
    h = s.represent(fv)
    n_dense = fv.dense.size
    assert not h[n_dense:].any()
    manual = 1 / (1 + math.exp(-(s.standardizer.transform(fv.dense) @ s.weights[:n_dense] + s.intercept)))
    assert score(s, fv) == pytest.approx(manual)


def test_text_variant_without_vocabulary_raises(small_features):
    s = Scorer(ScorerVariant.TEXT, np.zeros(3), 0.0, small_features[0].schema_hash)
    with pytest.raises(ValueError):
        score(s, small_features[0])


@settings(max_examples=50)
@given(st.floats(0.01, 5), st.integers(0, 1))
def test_monotone_in_positive_weight_feature(delta, j):
    s = _mk_scorer([0.7, 1.3], -0.2)
    base = np.array([0.1, -0.4])
    bumped = base.copy()
    bumped[j] += delta
    assert score(s, _fv(bumped)) > score(s, _fv(base))


def test_standardizer_is_fitted_on_training_rows(small_features):
    train = [(fv, float(i % 4 == 0)) for i, fv in enumerate(small_features[:400])]
    a = train_scorer(train)
    st_ = Standardizer.fit(np.vstack([fv.dense for fv, _ in train]))
    assert np.array_equal(a.standardizer.mean, st_.mean)
    assert np.array_equal(a.standardizer.scale, st_.scale)


def test_variants_train_and_roundtrip(small_features):
    data = [(fv, float(i % 3 == 0)) for i, fv in enumerate(small_features[:300])]
    for variant in ScorerVariant:
        s = train_scorer(data, variant)
        back = Scorer.from_dict(s.to_dict())
        assert np.array_equal(score_many(s, small_features[300:320]), score_many(back, small_features[300:320]))
        assert s.to_dict() == train_scorer(data, variant).to_dict()
    with pytest.raises(ValueError):
        Scorer.from_dict({**s.to_dict(), "format_version": 9})
