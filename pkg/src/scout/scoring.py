"""Logistic failure scorers over the strict-causal representation.

Four variants share the form ``p = sigmoid(w . h + b)`` and differ only in the
representation ``h``:

* ``StateLR``: standardized dense aggregates.
* ``TextLR``: TF-IDF over governed metadata tokens.
* ``SdjLR``: both channels concatenated, each scaled on its own.
* ``SeqFlattenLR``: standardized per-timestep telemetry flatten.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit

from ._logistic import fit_logistic
from .features import FeatureVector

P_CLIP = 1e-12
SCORER_FORMAT_VERSION = 1


class ScorerVariant(str, Enum):
    STATE = "StateLR"
    TEXT = "TextLR"
    SDJ = "SdjLR"
    SEQ_FLATTEN = "SeqFlattenLR"

    @property
    def uses_dense(self) -> bool:
        return self in (ScorerVariant.STATE, ScorerVariant.SDJ)

    @property
    def uses_sparse(self) -> bool:
        return self in (ScorerVariant.TEXT, ScorerVariant.SDJ)


class SchemaMismatchError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X) -> "Standardizer":
        X = np.asarray(X, dtype=float)
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        # constant columns would otherwise blow up
        scale = np.where(std > 0, std, 1.0)
        return cls(mean, scale)

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.scale

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["scale"], dtype=float))


@dataclass(frozen=True, eq=False)
class TfidfVocabulary:
    """Token index with smoothed IDF ``ln((1 + N) / (1 + df)) + 1``."""

    index: dict[str, int]
    idf: np.ndarray
    n_documents: int

    @classmethod
    def fit(cls, documents: Iterable[Sequence[str]]) -> "TfidfVocabulary":
        df: Counter = Counter()
        n = 0
        for doc in documents:
            n += 1
            df.update(set(doc))
        tokens = sorted(df)
        idf = np.array([math.log((1 + n) / (1 + df[t])) + 1.0 for t in tokens])
        return cls({t: i for i, t in enumerate(tokens)}, idf, n)

    def __len__(self) -> int:
        return len(self.index)

    def to_dict(self) -> dict:
        tokens = sorted(self.index, key=self.index.__getitem__)
        return {"tokens": tokens, "idf": self.idf.tolist(), "n_documents": self.n_documents}

    @classmethod
    def from_dict(cls, d: dict) -> "TfidfVocabulary":
        return cls({t: i for i, t in enumerate(d["tokens"])}, np.asarray(d["idf"], dtype=float),
                   int(d["n_documents"]))


def vectorize_tokens(vocab: TfidfVocabulary, tokens: Sequence[str]) -> np.ndarray:
    """L2-normalized TF-IDF vector; unseen tokens are ignored."""
    v = np.zeros(len(vocab))
    for tok in tokens:
        i = vocab.index.get(tok)
        if i is not None:
            v[i] += 1.0
    v *= vocab.idf
    norm = math.sqrt(float(v @ v))
    if norm > 0:
        v /= norm
    return v


@dataclass(frozen=True)
class ScorerConfig:
    """Training hyperparameters.

    ``l2=None`` means ``1 / total weight``.  ``class_weight="balanced"``
    reweights hard-label training so both classes carry equal total weight;
    it is ignored when any target is fractional.
    """

    l2: float | None = None
    class_weight: str | None = "balanced"
    tol: float = 1e-6
    max_iter: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.class_weight not in (None, "balanced"):
            raise ValueError("class_weight must be None or 'balanced'")
        if self.l2 is not None and not (self.l2 >= 0 and math.isfinite(self.l2)):
            raise ValueError("l2 must be a finite nonnegative number")

    def to_dict(self) -> dict:
        return {"l2": self.l2, "class_weight": self.class_weight, "tol": self.tol,
                "max_iter": self.max_iter, "seed": self.seed}


@dataclass(frozen=True, eq=False)
class Scorer:
    variant: ScorerVariant
    weights: np.ndarray
    intercept: float
    schema_hash: str
    standardizer: Standardizer | None = None
    vocabulary: TfidfVocabulary | None = None
    l2_strength: float = 0.0
    metadata: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return int(self.weights.shape[0])

    def _check(self, fv: FeatureVector) -> None:
        if fv.schema_hash != self.schema_hash:
            raise SchemaMismatchError(
                f"run {fv.run_id}: feature schema {fv.schema_hash!r} does not match model {self.schema_hash!r}"
            )

    def represent(self, fv: FeatureVector) -> np.ndarray:
        self._check(fv)
        v = self.variant
        if v is ScorerVariant.SEQ_FLATTEN:
            return self.standardizer.transform(fv.sequence)
        parts = []
        if v.uses_dense:
            parts.append(self.standardizer.transform(fv.dense))
        if v.uses_sparse:
            if self.vocabulary is None:
                raise ValueError(f"{v.value} scorer has no token vocabulary")
            parts.append(vectorize_tokens(self.vocabulary, fv.sparse_tokens))
        return parts[0] if len(parts) == 1 else np.concatenate(parts)

    def design_matrix(self, fvs: Sequence[FeatureVector]) -> np.ndarray:
        if not fvs:
            return np.zeros((0, self.dim))
        return np.vstack([self.represent(fv) for fv in fvs])

    def predict_design(self, H) -> np.ndarray:
        return np.clip(expit(np.asarray(H) @ self.weights + self.intercept), P_CLIP, 1 - P_CLIP)

    def to_dict(self) -> dict:
        return {
            "format_version": SCORER_FORMAT_VERSION,
            "variant": self.variant.value,
            "schema_hash": self.schema_hash,
            "weights": self.weights.tolist(),
            "intercept": self.intercept,
            "l2_strength": self.l2_strength,
            "standardizer": None if self.standardizer is None else self.standardizer.to_dict(),
            "vocabulary": None if self.vocabulary is None else self.vocabulary.to_dict(),
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scorer":
        if d.get("format_version") != SCORER_FORMAT_VERSION:
            raise ValueError(f"unsupported scorer format version {d.get('format_version')!r}")
        return cls(
            variant=ScorerVariant(d["variant"]),
            weights=np.asarray(d["weights"], dtype=float),
            intercept=float(d["intercept"]),
            schema_hash=d["schema_hash"],
            standardizer=None if d["standardizer"] is None else Standardizer.from_dict(d["standardizer"]),
            vocabulary=None if d["vocabulary"] is None else TfidfVocabulary.from_dict(d["vocabulary"]),
            l2_strength=float(d["l2_strength"]),
            metadata=dict(d.get("metadata", {})),
        )


def score(scorer: Scorer, fv: FeatureVector) -> float:
    h = scorer.represent(fv)
    p = 1.0 / (1.0 + math.exp(-(float(h @ scorer.weights) + scorer.intercept)))
    return min(max(p, P_CLIP), 1 - P_CLIP)


def score_many(scorer: Scorer, fvs: Sequence[FeatureVector]) -> np.ndarray:
    return scorer.predict_design(scorer.design_matrix(fvs))


def _unpack(examples) -> tuple[list[FeatureVector], np.ndarray, np.ndarray]:
    fvs, targets, weights = [], [], []
    for ex in examples:
        fvs.append(ex[0])
        targets.append(float(ex[1]))
        weights.append(float(ex[2]) if len(ex) > 2 else 1.0)
    return fvs, np.asarray(targets), np.asarray(weights)


def train_scorer(examples, variant: ScorerVariant | str = ScorerVariant.STATE,
                 config: ScorerConfig | None = None) -> Scorer:
    """Fit a scorer on ``(feature_vector, target, weight)`` triples.

    Weight may be omitted (defaults to 1).  Targets in ``[0, 1]`` may be
    fractional.
    """
    config = config or ScorerConfig()
    variant = ScorerVariant(variant)
    fvs, t, w = _unpack(examples)
    if not fvs:
        raise ValueError("no training examples")
    if np.any((t < 0) | (t > 1)) or not np.all(np.isfinite(t)):
        raise ValueError("targets must lie in [0, 1]")
    if np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be positive and finite")
    hard = bool(np.all((t == 0) | (t == 1)))
    if hard and np.unique(t).size < 2:
        raise ValueError("degenerate training set: all targets are the same hard label")
    hashes = {fv.schema_hash for fv in fvs}
    if len(hashes) != 1:
        raise SchemaMismatchError(f"training examples mix feature schemas {sorted(hashes)}")
    schema = hashes.pop()

    standardizer = vocabulary = None
    parts = []
    if variant is ScorerVariant.SEQ_FLATTEN:
        raw = np.vstack([fv.sequence for fv in fvs])
        if not np.all(np.isfinite(raw)):
            raise ValueError("non-finite sequence features in training data")
        standardizer = Standardizer.fit(raw)
        parts.append(standardizer.transform(raw))
    if variant.uses_dense:
        raw = np.vstack([fv.dense for fv in fvs])
        if not np.all(np.isfinite(raw)):
            bad = fvs[int(np.flatnonzero(~np.isfinite(raw).all(axis=1))[0])].run_id
            raise ValueError(f"non-finite dense features in training data (run {bad})")
        standardizer = Standardizer.fit(raw)
        parts.append(standardizer.transform(raw))
    if variant.uses_sparse:
        vocabulary = TfidfVocabulary.fit(fv.sparse_tokens for fv in fvs)
        parts.append(np.vstack([vectorize_tokens(vocabulary, fv.sparse_tokens) for fv in fvs]))
    H = parts[0] if len(parts) == 1 else np.hstack(parts)

    fit_w = w.copy()
    if hard and config.class_weight == "balanced":
        pos = t == 1
        fit_w[pos] *= w.sum() / (2 * w[pos].sum())
        fit_w[~pos] *= w.sum() / (2 * w[~pos].sum())
    l2 = config.l2 if config.l2 is not None else 1.0 / fit_w.sum()
    fit = fit_logistic(H, t, fit_w, l2=l2, tol=config.tol, max_iter=config.max_iter)
    return Scorer(
        variant=variant,
        weights=fit.coef,
        intercept=float(fit.intercept),
        schema_hash=schema,
        standardizer=standardizer,
        vocabulary=vocabulary,
        l2_strength=float(l2),
        metadata={
            **config.to_dict(),
            "n_train": len(fvs),
            "hard_targets": hard,
            "class_weight_applied": hard and config.class_weight == "balanced",
            "n_iter": fit.n_iter,
            "grad_norm": fit.grad_norm,
            "converged": fit.converged,
        },
    )
