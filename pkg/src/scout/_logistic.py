"""Damped Newton solver for weighted, L2-penalised logistic regression.

Targets may be fractional: the loss is the weighted cross-entropy
``-t log p - (1 - t) log(1 - p)``, so a soft target enters exactly like a
fractional label.  The objective is normalised by the total weight, which
makes duplicating an example at half weight equivalent to keeping it once.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit


@dataclass
class LogisticFit:
    coef: np.ndarray
    intercept: float
    n_iter: int
    grad_norm: float
    converged: bool


def _loss(X, t, s, l2, w, b):
    z = X @ w + b
    # -t log sigma(z) - (1-t) log sigma(-z)
    ce = t * np.logaddexp(0.0, -z) + (1.0 - t) * np.logaddexp(0.0, z)
    return float(s @ ce) + 0.5 * l2 * float(w @ w)


def fit_logistic(
    X,
    t,
    sample_weight=None,
    *,
    l2: float | None = None,
    fit_intercept: bool = True,
    tol: float = 1e-6,
    max_iter: int = 100,
    init_intercept: float | None = None,
) -> LogisticFit:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    t = np.asarray(t, dtype=float)
    n, d = X.shape
    s = np.ones(n) if sample_weight is None else np.asarray(sample_weight, dtype=float)
    total = s.sum()
    if total <= 0:
        raise ValueError("sample weights must have positive total")
    s = s / total
    if l2 is None:
        l2 = 1.0 / total

    w = np.zeros(d)
    if init_intercept is not None:
        b = float(init_intercept)
    elif fit_intercept:
        rate = float(np.clip(s @ t, 1e-6, 1 - 1e-6))
        b = float(np.log(rate / (1 - rate)))
    else:
        b = 0.0
    loss = _loss(X, t, s, l2, w, b)
    gnorm = np.inf
    for it in range(1, max_iter + 1):
        p = expit(X @ w + b)
        r = s * (p - t)
        g_w = X.T @ r + l2 * w
        g_b = float(r.sum()) if fit_intercept else 0.0
        gnorm = float(np.sqrt(g_w @ g_w + g_b * g_b))
        if gnorm < tol:
            return LogisticFit(w, b, it - 1, gnorm, True)
        h = s * p * (1.0 - p)
        H_ww = (X * h[:, None]).T @ X + l2 * np.eye(d)
        if fit_intercept:
            H_wb = X.T @ h
            H = np.block([[H_ww, H_wb[:, None]], [H_wb[None, :], np.array([[h.sum()]])]])
            g = np.append(g_w, g_b)
        else:
            H, g = H_ww, g_w
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, g, rcond=None)[0]
        # Armijo backtracking
        alpha = 1.0
        slope = float(g @ step)
        while True:
            w_new = w - alpha * step[:d]
            b_new = b - alpha * step[d] if fit_intercept else b
            new_loss = _loss(X, t, s, l2, w_new, b_new)
            if new_loss <= loss - 1e-4 * alpha * slope or alpha < 1e-10:
                break
            alpha *= 0.5
        w, b, loss = w_new, b_new, new_loss
    p = expit(X @ w + b)
    r = s * (p - t)
    g_w = X.T @ r + l2 * w
    g_b = float(r.sum()) if fit_intercept else 0.0
    gnorm = float(np.sqrt(g_w @ g_w + g_b * g_b))
    return LogisticFit(w, b, max_iter, gnorm, gnorm < tol)
