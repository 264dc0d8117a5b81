"""Outer criteria ``C(beta)`` and their gradients.

Hold-out criteria are normalized by the validation size.  Cross-validation
averages fold criteria; the multiclass criterion is the (unnormalized)
cross-entropy of a one-vs-all family of linear scores.
"""
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.special import logsumexp

from .datafit import SparseDesign, _sigmoid


CRITERION_KINDS = ("mse", "logistic", "smoothed_hinge")


@dataclass
class HoldoutSplit:
    X_train: SparseDesign
    y_train: np.ndarray
    X_val: SparseDesign
    y_val: np.ndarray
    X_test: Optional[SparseDesign] = None
    y_test: Optional[np.ndarray] = None
    train_idx: Optional[np.ndarray] = None
    val_idx: Optional[np.ndarray] = None

    def __post_init__(self):
        self.X_train = SparseDesign.from_any(self.X_train)
        self.X_val = SparseDesign.from_any(self.X_val)
        self.y_train = np.asarray(self.y_train, dtype=float)
        self.y_val = np.asarray(self.y_val, dtype=float)
        if self.X_train.p != self.X_val.p:
            raise ValueError("train and validation designs differ in width")
        if self.X_test is not None:
            self.X_test = SparseDesign.from_any(self.X_test)
            if self.X_test.p != self.X_train.p:
                raise ValueError("test design differs in width")


@dataclass
class CvSpec:
    folds: List[HoldoutSplit] = field(default_factory=list)

    def __post_init__(self):
        if len(self.folds) < 2:
            raise ValueError("cross-validation needs K >= 2 folds")

    @property
    def K(self):
        return len(self.folds)


def smoothed_hinge(x):
    x = np.asarray(x, dtype=float)
    return np.where(x <= 0, 0.5 - x, np.where(x <= 1, 0.5 * (1 - x) ** 2, 0.))


def smoothed_hinge_deriv(x):
    x = np.asarray(x, dtype=float)
    return np.where(x <= 0, -1., np.where(x <= 1, x - 1., 0.))


def _value_grad(kind, beta, X, y):
    X = SparseDesign.from_any(X)
    beta = np.asarray(beta, dtype=float)
    y = np.asarray(y, dtype=float)
    if beta.shape != (X.p,):
        raise ValueError(f"beta has shape {beta.shape}, expected ({X.p},)")
    n = X.n
    pred = X @ beta
    if kind == "mse":
        res = y - pred
        return res @ res / n, -2. / n * (X.csc.T @ res)
    if kind == "logistic":
        m = y * pred
        value = np.sum(np.logaddexp(0., -m)) / n
        return value, -(X.csc.T @ (y * _sigmoid(-m))) / n
    if kind == "smoothed_hinge":
        m = y * pred
        value = np.sum(smoothed_hinge(m)) / n
        return value, X.csc.T @ (y * smoothed_hinge_deriv(m)) / n
    raise ValueError(f"unknown criterion {kind!r}; expected one of "
                     f"{CRITERION_KINDS}")


def criterion_value_grad(kind, beta, split):
    """Value and gradient of a hold-out criterion on ``split``'s validation
    part."""
    return _value_grad(kind, beta, split.X_val, split.y_val)


def cv_value_grad(kind, betas, spec):
    """Mean of the fold criteria and the per-fold gradients."""
    if len(betas) != spec.K:
        raise ValueError(f"{len(betas)} coefficient vectors for {spec.K} folds")
    vals, grads = [], []
    for beta, fold in zip(betas, spec.folds):
        v, g = criterion_value_grad(kind, beta, fold)
        vals.append(v)
        grads.append(g / spec.K)
    return float(np.mean(vals)), grads


def multiclass_ce_value_grad(betas, X, y_labels):
    """Cross-entropy of softmax scores ``X @ beta_k`` for labels in 1..q.

    Returns
    -------
    value : float
    grads : list of q ndarrays of shape (p,)
    """
    X = SparseDesign.from_any(X)
    betas = [np.asarray(b, dtype=float) for b in betas]
    q = len(betas)
    if q < 2:
        raise ValueError("multiclass criterion needs q >= 2")
    y = np.asarray(y_labels)
    if np.any((y < 1) | (y > q)) or np.any(y != np.round(y)):
        raise ValueError(f"labels must be integers in [1, {q}]")
    idx = y.astype(int) - 1
    scores = np.column_stack([X @ b for b in betas])
    log_norm = logsumexp(scores, axis=1)
    value = float(np.sum(log_norm - scores[np.arange(X.n), idx]))
    probs = np.exp(scores - log_norm[:, None])
    probs[np.arange(X.n), idx] -= 1.
    grads = [X.csc.T @ probs[:, k] for k in range(q)]
    return value, grads


class HoldoutCriterion:
    """Criterion handle bound to validation data: ``value``/``grad`` of
    ``beta``."""

    def __init__(self, kind, X_val, y_val):
        if kind not in CRITERION_KINDS:
            raise ValueError(f"unknown criterion {kind!r}")
        self.kind = kind
        self.X_val = SparseDesign.from_any(X_val)
        self.y_val = np.asarray(y_val, dtype=float)

    def value_grad(self, beta):
        return _value_grad(self.kind, beta, self.X_val, self.y_val)

    def value(self, beta):
        return self.value_grad(beta)[0]

    def grad(self, beta):
        return self.value_grad(beta)[1]


class DualCriterion:
    """Criterion on primal coefficients evaluated from a dual SVM variable.

    The primal vector is ``w = sum_i beta_i y_i x_i``, ie ``df.M @ beta``.
    """

    def __init__(self, primal, df):
        self.primal = primal
        self.M = df.M

    def value_grad(self, beta):
        v, g = self.primal.value_grad(self.M @ beta)
        return v, self.M.T @ g

    def value(self, beta):
        return self.value_grad(beta)[0]

    def grad(self, beta):
        return self.value_grad(beta)[1]


class MulticlassCriterion:
    """Multiclass cross-entropy over ``q`` coefficient vectors, bound to
    validation data."""

    def __init__(self, X_val, y_val):
        self.X_val = SparseDesign.from_any(X_val)
        self.y_val = np.asarray(y_val)

    def value_grad(self, betas):
        return multiclass_ce_value_grad(betas, self.X_val, self.y_val)

    def value(self, betas):
        return self.value_grad(betas)[0]

    def for_class(self, k, betas):
        """Single-class handle: ``beta -> C(betas with betas[k] = beta)``."""
        return _ClassSlice(self, k, betas)


class _ClassSlice:
    def __init__(self, parent, k, betas):
        self.parent, self.k, self.betas = parent, k, list(betas)

    def value_grad(self, beta):
        betas = list(self.betas)
        betas[self.k] = beta
        value, grads = self.parent.value_grad(betas)
        return value, grads[self.k]

    def value(self, beta):
        return self.value_grad(beta)[0]

    def grad(self, beta):
        return self.value_grad(beta)[1]
