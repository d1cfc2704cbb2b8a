"""Score calibrators and overlap-aware calibrator selection.

Candidate maps from raw score to probability are fitted on a labeled source
set.  :func:`oa_cal` optionally reweights that set toward an unlabeled target
score distribution, but only when overlap diagnostics say the weights can be
trusted, and picks a candidate by the upper bound ``mean + kappa * std`` of
its cross-fitted decision cost.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
from scipy.special import expit

from ._logistic import fit_logistic
from .core import CostModel, bayes_threshold, per_run_costs
from .metrics import roc_auc

P_MIN = 1e-6
P_MAX = 1 - 1e-6
MIN_PAIRS = 10
_LOG_EPS = 1e-6


class CalibratorKind(str, Enum):
    IDENTITY = "Identity"
    SIGMOID = "Sigmoid"
    ISOTONIC = "Isotonic"
    BETA = "Beta"
    CALIB_TREE = "CalibTree"
    BBQ_LITE = "BBQLite"
    VENN_ABERS = "VennAbers"


# smoother maps first; used to break exact ties in selection
KIND_PRIORITY = (
    CalibratorKind.SIGMOID,
    CalibratorKind.BETA,
    CalibratorKind.BBQ_LITE,
    CalibratorKind.ISOTONIC,
    CalibratorKind.CALIB_TREE,
    CalibratorKind.VENN_ABERS,
    CalibratorKind.IDENTITY,
)
HIGH_VARIANCE_KINDS = frozenset({CalibratorKind.ISOTONIC, CalibratorKind.CALIB_TREE, CalibratorKind.VENN_ABERS})
DEFAULT_CANDIDATES = (
    CalibratorKind.SIGMOID,
    CalibratorKind.BETA,
    CalibratorKind.ISOTONIC,
    CalibratorKind.CALIB_TREE,
    CalibratorKind.BBQ_LITE,
)


class CalibrationError(ValueError):
    pass


# ---------------------------------------------------------------- PAVA

def pava(y, w=None) -> np.ndarray:
    """Weighted pool-adjacent-violators on an already ordered sequence."""
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if w is None else np.asarray(w, dtype=float)
    means: list[float] = []
    weights: list[float] = []
    sizes: list[int] = []
    for yi, wi in zip(y.tolist(), w.tolist()):
        m, ww, sz = yi, wi, 1
        while means and means[-1] > m:
            pm, pw, ps = means.pop(), weights.pop(), sizes.pop()
            tot = pw + ww
            m = (pm * pw + m * ww) / tot
            ww = tot
            sz += ps
        means.append(m)
        weights.append(ww)
        sizes.append(sz)
    return np.repeat(means, sizes)


def _pool_ties(x, y, w):
    """Sort by x and merge equal x into one weighted point."""
    order = np.argsort(x, kind="stable")
    x, y, w = x[order], y[order], w[order]
    ux, start = np.unique(x, return_index=True)
    sw = np.add.reduceat(w, start)
    sy = np.add.reduceat(w * y, start)
    return ux, sy / sw, sw


def isotonic_fit(x, y, w=None) -> tuple[np.ndarray, np.ndarray]:
    """Breakpoints and fitted values of the weighted isotonic regression."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones_like(x) if w is None else np.asarray(w, dtype=float)
    ux, uy, uw = _pool_ties(x, y, w)
    return ux, pava(uy, uw)


# ---------------------------------------------------------------- calibrators

def _clamp(p):
    return np.clip(p, P_MIN, P_MAX)


@dataclass(frozen=True, eq=False)
class Calibrator:
    """A fitted score-to-probability map.

    ``params`` holds the kind-specific parameters as plain lists and floats so
    the calibrator round-trips through JSON.
    """

    kind: CalibratorKind
    params: dict = field(default_factory=dict)
    n_cal: int = 0
    weighted: bool = False

    def _array(self, key: str) -> np.ndarray:
        cache = self.params.setdefault("_arrays", {})
        arr = cache.get(key)
        if arr is None:
            arr = cache[key] = np.asarray(self.params[key], dtype=float)
        return arr

    def predict(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        k = self.kind
        P = self.params
        if k is CalibratorKind.IDENTITY:
            out = s
        elif k is CalibratorKind.SIGMOID:
            out = expit(P["a"] * s + P["b"])
        elif k is CalibratorKind.BETA:
            sc = np.clip(s, _LOG_EPS, 1 - _LOG_EPS)
            out = expit(P["a"] * np.log(sc) - P["b"] * np.log1p(-sc) + P["c"])
        elif k is CalibratorKind.ISOTONIC:
            out = np.interp(s, self._array("x"), self._array("y"))
        elif k in (CalibratorKind.CALIB_TREE, CalibratorKind.BBQ_LITE):
            idx = np.searchsorted(self._array("edges"), s, side="left")
            out = self._array("values")[idx]
        elif k is CalibratorKind.VENN_ABERS:
            out = _venn_abers_predict(self, s)
        else:  # pragma: no cover
            raise CalibrationError(f"unknown calibrator kind {k}")
        return _clamp(out)

    def __call__(self, s):
        return self.predict(s)

    def to_dict(self) -> dict:
        params = {k: v for k, v in self.params.items() if not k.startswith("_")}
        return {"kind": self.kind.value, "params": params, "n_cal": self.n_cal, "weighted": self.weighted}

    @classmethod
    def from_dict(cls, d: dict) -> "Calibrator":
        return cls(CalibratorKind(d["kind"]), dict(d["params"]), int(d.get("n_cal", 0)),
                   bool(d.get("weighted", False)))


def apply(calibrator: Calibrator, score):
    """Calibrated probability for a score (float in, float out) or array of scores."""
    out = calibrator.predict(score)
    return float(out) if np.ndim(score) == 0 else out


def identity_calibrator() -> Calibrator:
    return Calibrator(CalibratorKind.IDENTITY)


def _standardize_1d(x, w):
    mu = float(np.average(x, weights=w))
    sd = float(np.sqrt(np.average((x - mu) ** 2, weights=w)))
    return mu, sd


def _fit_sigmoid(s, t, w) -> dict:
    mu, sd = _standardize_1d(s, w)
    if sd <= 1e-12:
        rate = float(np.clip(np.average(t, weights=w), P_MIN, P_MAX))
        return {"a": 0.0, "b": math.log(rate / (1 - rate))}
    fit = fit_logistic(((s - mu) / sd)[:, None], t, w, l2=1e-6)
    slope = float(fit.coef[0])
    if slope < 0:
        rate = float(np.clip(np.average(t, weights=w), P_MIN, P_MAX))
        return {"a": 0.0, "b": math.log(rate / (1 - rate))}
    a = slope / sd
    return {"a": a, "b": float(fit.intercept) - a * mu}


def _fit_beta(s, t, w) -> dict:
    sc = np.clip(s, _LOG_EPS, 1 - _LOG_EPS)
    feats = np.column_stack([np.log(sc), -np.log1p(-sc)])
    active = [0, 1]
    while active:
        X = feats[:, active]
        mu = np.average(X, axis=0, weights=w)
        sd = np.sqrt(np.average((X - mu) ** 2, axis=0, weights=w))
        keep = sd > 1e-12
        if not keep.all():
            active = [a for a, k in zip(active, keep) if k]
            continue
        fit = fit_logistic((X - mu) / sd, t, w, l2=1e-6)
        coef = fit.coef / sd
        if np.all(coef >= 0):
            ab = [0.0, 0.0]
            for j, a in enumerate(active):
                ab[a] = float(coef[j])
            return {"a": ab[0], "b": ab[1], "c": float(fit.intercept - coef @ mu)}
        # clamp: drop the most negative coefficient and refit
        active.pop(int(np.argmin(coef)))
    rate = float(np.clip(np.average(t, weights=w), P_MIN, P_MAX))
    return {"a": 0.0, "b": 0.0, "c": math.log(rate / (1 - rate))}


def _fit_isotonic(s, t, w) -> dict:
    x, y = isotonic_fit(s, t, w)
    return {"x": x.tolist(), "y": y.tolist()}


def _fit_tree(s, t, w, max_depth: int = 3, min_leaf: int | None = None) -> dict:
    order = np.argsort(s, kind="stable")
    s, t, w = s[order], t[order], w[order]
    n = s.size
    if min_leaf is None:
        min_leaf = max(10, int(math.ceil(0.05 * n)))
    cw = np.concatenate([[0.0], np.cumsum(w)])
    cwy = np.concatenate([[0.0], np.cumsum(w * t)])
    cwyy = np.concatenate([[0.0], np.cumsum(w * t * t)])

    def sse(i, j):
        sw = cw[j] - cw[i]
        if sw <= 0:
            return 0.0
        sy = cwy[j] - cwy[i]
        return (cwyy[j] - cwyy[i]) - sy * sy / sw

    edges: list[float] = []

    def grow(i, j, depth):
        if depth == max_depth or j - i < 2 * min_leaf:
            return
        base = sse(i, j)
        best, best_k = base - 1e-12, None
        for k in range(i + min_leaf, j - min_leaf + 1):
            if s[k] == s[k - 1]:
                continue
            v = sse(i, k) + sse(k, j)
            if v < best:
                best, best_k = v, k
        if best_k is None:
            return
        edges.append(0.5 * (s[best_k - 1] + s[best_k]))
        grow(i, best_k, depth + 1)
        grow(best_k, j, depth + 1)

    grow(0, n, 0)
    edges.sort()
    idx = np.searchsorted(np.asarray(edges), s, side="left")
    values = []
    for b in range(len(edges) + 1):
        m = idx == b
        values.append(float(np.average(t[m], weights=w[m])))
    return {"edges": edges, "values": values}


def _fit_bbq(s, t, w, n_bins: int = 10) -> dict:
    qs = np.quantile(s, np.linspace(0, 1, n_bins + 1)[1:-1])
    edges = np.unique(qs)
    idx = np.searchsorted(edges, s, side="left")
    values = []
    for b in range(edges.size + 1):
        m = idx == b
        # Laplace smoothing keeps every bin rate strictly inside (0, 1)
        values.append(float((np.sum(w[m] * t[m]) + 1.0) / (np.sum(w[m]) + 2.0)))
    return {"edges": edges.tolist(), "values": values}


def _fit_venn_abers(s, t, w) -> dict:
    x, y, ww = _pool_ties(s, t, w)
    return {"x": x.tolist(), "y": y.tolist(), "w": ww.tolist(), "test_weight": float(np.mean(w))}


def _venn_abers_at(x, y, w, tw, s) -> float:
    pos = int(np.searchsorted(x, s, side="left"))
    equal = pos < x.size and x[pos] == s
    out = []
    for label in (0.0, 1.0):
        if equal:
            yy = y.copy()
            wsum = w[pos] + tw
            yy[pos] = (y[pos] * w[pos] + label * tw) / wsum
            wa = w.copy()
            wa[pos] = wsum
            fitted = pava(yy, wa)[pos]
        else:
            yy = np.insert(y, pos, label)
            wa = np.insert(w, pos, tw)
            fitted = pava(yy, wa)[pos]
        out.append(fitted)
    p0, p1 = out
    return p1 / (1.0 - p0 + p1)


def _venn_abers_predict(cal: Calibrator, s) -> np.ndarray:
    P = cal.params
    cache = P.setdefault("_cache", {})
    x, y, w = cal._array("x"), cal._array("y"), cal._array("w")
    flat = np.atleast_1d(s).ravel()
    out = np.empty(flat.size)
    for i, si in enumerate(flat.tolist()):
        pos = int(np.searchsorted(x, si, side="left"))
        # the output depends on s only through its position among calibration scores
        key = (pos, bool(pos < x.size and x[pos] == si))
        if key not in cache:
            cache[key] = _venn_abers_at(x, y, w, P["test_weight"], si)
        out[i] = cache[key]
    return out.reshape(np.shape(s))


_FITTERS = {
    CalibratorKind.SIGMOID: _fit_sigmoid,
    CalibratorKind.BETA: _fit_beta,
    CalibratorKind.ISOTONIC: _fit_isotonic,
    CalibratorKind.CALIB_TREE: _fit_tree,
    CalibratorKind.BBQ_LITE: _fit_bbq,
    CalibratorKind.VENN_ABERS: _fit_venn_abers,
}


def _pairs_arrays(pairs, weights=None):
    if isinstance(pairs, tuple) and len(pairs) in (2, 3) and np.ndim(pairs[0]) == 1:
        s = np.asarray(pairs[0], dtype=float)
        t = np.asarray(pairs[1], dtype=float)
        w = np.asarray(pairs[2], dtype=float) if len(pairs) == 3 else None
    else:
        rows = list(pairs)
        s = np.array([r[0] for r in rows], dtype=float)
        t = np.array([r[1] for r in rows], dtype=float)
        w = np.array([r[2] if len(r) > 2 else 1.0 for r in rows], dtype=float)
    if weights is not None:
        w = np.asarray(weights, dtype=float)
    if w is None:
        w = np.ones_like(s)
    return s, t, w


def fit_calibrator(kind, pairs, weights=None, *, min_pairs: int = MIN_PAIRS) -> Calibrator:
    """Fit a calibrator of ``kind`` on ``(score, target[, weight])`` pairs.

    ``pairs`` may also be a tuple of arrays ``(scores, targets[, weights])``.
    """
    kind = CalibratorKind(kind)
    s, t, w = _pairs_arrays(pairs, weights)
    if kind is CalibratorKind.IDENTITY:
        return Calibrator(kind, {}, int(s.size), False)
    if s.size < min_pairs:
        raise CalibrationError(f"need at least {min_pairs} calibration pairs, got {s.size}")
    if not np.all(np.isfinite(s)) or np.any((s < 0) | (s > 1)):
        raise CalibrationError("calibration scores must lie in [0, 1]")
    if np.any((t < 0) | (t > 1)) or not np.all(np.isfinite(t)):
        raise CalibrationError("calibration targets must lie in [0, 1]")
    if np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise CalibrationError("calibration weights must be positive and finite")
    hard = bool(np.all((t == 0) | (t == 1)))
    if kind in (CalibratorKind.SIGMOID, CalibratorKind.BETA):
        if hard and t.min() == t.max():
            raise CalibrationError(f"{kind.value} needs both classes in the calibration set")
        if not hard and t.min() == t.max() and t.min() in (0.0, 1.0):
            raise CalibrationError(f"{kind.value} needs target spread")
    params = _FITTERS[kind](s, t, w)
    return Calibrator(kind, params, int(s.size), bool(np.any(w != w[0])))


# ---------------------------------------------------------------- overlap

@dataclass(frozen=True, eq=False)
class OverlapDiagnostics:
    domain_auc: float
    weights: np.ndarray
    ess: float
    ess_ratio: float
    clip_bounds: tuple[float, float] = (0.1, 10.0)

    def summary(self) -> dict:
        return {"domain_auc": self.domain_auc, "ess": self.ess, "ess_ratio": self.ess_ratio,
                "clip_bounds": list(self.clip_bounds),
                "weight_min": float(self.weights.min()), "weight_max": float(self.weights.max())}


def effective_sample_size(w) -> float:
    w = np.asarray(w, dtype=float)
    return float(w.sum() ** 2 / np.sum(w * w))


def overlap_diagnostics(source_scores, target_scores, clip_bounds=(0.1, 10.0)) -> OverlapDiagnostics:
    """Domain-classifier importance weights for source examples."""
    src = np.asarray(source_scores, dtype=float)
    tgt = np.asarray(target_scores, dtype=float)
    if src.size == 0 or tgt.size == 0:
        raise ValueError("source and target score sets must be nonempty")
    lo, hi = clip_bounds
    x = np.concatenate([src, tgt])
    d = np.concatenate([np.zeros(src.size), np.ones(tgt.size)])
    mu, sd = float(x.mean()), float(x.std())
    if sd <= 1e-12:
        g_src = np.full(src.size, tgt.size / x.size)
        auc = 0.5
    else:
        z = (x - mu) / sd
        fit = fit_logistic(z[:, None], d, l2=1e-4)
        g = expit(z * fit.coef[0] + fit.intercept)
        g_src = g[: src.size]
        auc = roc_auc(g, d)
    g_src = np.clip(g_src, 1e-12, 1 - 1e-12)
    w = np.clip(g_src / (1 - g_src) * (src.size / tgt.size), lo, hi)
    ess = effective_sample_size(w)
    return OverlapDiagnostics(float(auc), w, ess, ess / src.size, (float(lo), float(hi)))


# ---------------------------------------------------------------- OA-Cal

@dataclass(frozen=True)
class OverlapGates:
    ess_min: float = 0.2
    auc_max: float = 0.95
    n_min: int = 200
    clip_bounds: tuple[float, float] = (0.1, 10.0)


@dataclass(frozen=True)
class OACalConfig:
    candidates: tuple = DEFAULT_CANDIDATES
    kappa: float = 1.0
    gates: OverlapGates = OverlapGates()
    n_repeats: int = 5
    n_folds: int = 2
    seed: int = 0
    # ablation switches
    force_weighting: bool = False
    allow_high_variance: bool = False
    min_pairs: int = MIN_PAIRS


@dataclass
class CandidateResult:
    kind: str
    fold_costs: list[float]
    mean: float
    std: float
    ucb: float
    error: str | None = None


@dataclass
class OACalReport:
    candidates: list[CandidateResult]
    selected: str
    weighting_enabled: bool
    kappa: float
    gate_reasons: list[str]
    pruned: list[str]
    diagnostics: dict
    fallback: bool = False
    n_source: int = 0
    n_target: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def _stratified_folds(t, n_folds, rng) -> list[np.ndarray]:
    strata = (np.asarray(t) >= 0.5).astype(int)
    folds = [[] for _ in range(n_folds)]
    for c in (0, 1):
        idx = np.flatnonzero(strata == c)
        idx = idx[rng.permutation(idx.size)]
        for k in range(n_folds):
            folds[k].extend(idx[k::n_folds].tolist())
    return [np.sort(np.asarray(f, dtype=int)) for f in folds]


def oa_cal_scores(
    source_scores,
    source_targets,
    target_scores,
    cost: CostModel,
    config: OACalConfig | None = None,
    source_weights=None,
) -> tuple[Calibrator, OACalReport]:
    """Overlap-aware calibrator selection on raw scores.

    Only the target *scores* are consumed; no target label can reach this
    function.
    """
    config = config or OACalConfig()
    gates = config.gates
    s = np.asarray(source_scores, dtype=float)
    t = np.asarray(source_targets, dtype=float)
    base_w = np.ones_like(s) if source_weights is None else np.asarray(source_weights, dtype=float)
    tgt = np.asarray(target_scores, dtype=float)
    hard = np.all((t == 0) | (t == 1))
    if hard and t.min() == t.max():
        raise CalibrationError("source calibration set needs both classes")
    tau = bayes_threshold(cost)

    diag = overlap_diagnostics(s, tgt, gates.clip_bounds)
    reasons = []
    if diag.ess_ratio < gates.ess_min:
        reasons.append(f"ess_ratio {diag.ess_ratio:.3f} < {gates.ess_min}")
    if diag.domain_auc > gates.auc_max:
        reasons.append(f"domain_auc {diag.domain_auc:.3f} > {gates.auc_max}")
    gated_off = bool(reasons)
    weighting = config.force_weighting or not gated_off
    if s.size < gates.n_min:
        reasons.append(f"n_cal {s.size} < {gates.n_min}")
    w = base_w * diag.weights if weighting else base_w

    kinds = [CalibratorKind(k) for k in config.candidates]
    pruned = []
    if not config.allow_high_variance and (gated_off or s.size < gates.n_min):
        pruned = [k.value for k in kinds if k in HIGH_VARIANCE_KINDS]
        kinds = [k for k in kinds if k not in HIGH_VARIANCE_KINDS]

    results: list[CandidateResult] = []
    if kinds:
        splits = []
        for r in range(config.n_repeats):
            rng = np.random.default_rng([config.seed, r])
            folds = _stratified_folds(t, config.n_folds, rng)
            for k in range(config.n_folds):
                held = folds[k]
                fit_idx = np.concatenate([folds[j] for j in range(config.n_folds) if j != k])
                splits.append((fit_idx, held))
        for kind in kinds:
            fold_costs = []
            err = None
            for fit_idx, held in splits:
                try:
                    cal = fit_calibrator(kind, (s[fit_idx], t[fit_idx], w[fit_idx]), min_pairs=config.min_pairs)
                except CalibrationError as exc:
                    err = str(exc)
                    break
                c = per_run_costs(cal.predict(s[held]), t[held], cost, tau)
                fold_costs.append(float(np.average(c, weights=w[held])))
            if err is not None:
                results.append(CandidateResult(kind.value, fold_costs, math.inf, math.inf, math.inf, err))
                continue
            mu = float(np.mean(fold_costs))
            sd = float(np.std(fold_costs, ddof=1)) if len(fold_costs) > 1 else 0.0
            results.append(CandidateResult(kind.value, fold_costs, mu, sd, mu + config.kappa * sd))

    viable = [r for r in results if math.isfinite(r.ucb)]
    fallback = not viable
    if fallback:
        winner = CalibratorKind.SIGMOID
    else:
        best = min(r.ucb for r in viable)
        tol = 1e-12 * max(1.0, abs(best))
        tied = {CalibratorKind(r.kind) for r in viable if r.ucb <= best + tol}
        winner = next(k for k in KIND_PRIORITY if k in tied)
    try:
        calibrator = fit_calibrator(winner, (s, t, w), min_pairs=config.min_pairs)
    except CalibrationError:
        calibrator = identity_calibrator()
        fallback = True
    report = OACalReport(
        candidates=results,
        selected=calibrator.kind.value,
        weighting_enabled=bool(weighting),
        kappa=config.kappa,
        gate_reasons=reasons,
        pruned=pruned,
        diagnostics=diag.summary(),
        fallback=fallback,
        n_source=int(s.size),
        n_target=int(tgt.size),
    )
    return calibrator, report


def oa_cal(scorer, source_cal, target_inputs, cost: CostModel,
           config: OACalConfig | None = None) -> tuple[Calibrator, OACalReport]:
    """Overlap-aware calibration for a trained scorer.

    ``source_cal`` holds ``(feature_vector, target[, weight])`` rows;
    ``target_inputs`` holds bare feature vectors, which carry no label.
    """
    from .scoring import score_many

    rows = list(source_cal)
    fvs = [r[0] for r in rows]
    t = np.array([float(r[1]) for r in rows])
    w = np.array([float(r[2]) if len(r) > 2 else 1.0 for r in rows])
    src = score_many(scorer, fvs)
    tgt = score_many(scorer, list(target_inputs))
    return oa_cal_scores(src, t, tgt, cost, config, source_weights=w)
