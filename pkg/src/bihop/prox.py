"""Separable penalties, their proximal operators and partial derivatives.

All regularization strengths are parameterized in log-scale: a penalty of
strength ``e^lam`` is described by ``lam``.  The proximal operators exposed
here are those of ``gamma * g_j(., lam)`` for an explicit step ``gamma > 0``.
"""
from dataclasses import dataclass
from enum import Enum

import numpy as np


class PenaltyKind(str, Enum):
    L1 = "l1"
    ELASTIC_NET = "enet"
    BOX = "box"
    L2 = "l2"


# integer codes shared with the compiled kernels
KIND_CODES = {PenaltyKind.L1: 0, PenaltyKind.ELASTIC_NET: 1,
              PenaltyKind.BOX: 2, PenaltyKind.L2: 3}


class DomainError(ValueError):
    """Raised on non-finite inputs or unsupported configurations."""


@dataclass(frozen=True)
class Penalty:
    """A separable penalty ``g(beta, lam) = sum_j g_j(beta_j, lam)``.

    Parameters
    ----------
    kind : PenaltyKind or str
        One of ``"l1"``, ``"enet"``, ``"box"`` (indicator of ``[0, e^lam]``)
        or ``"l2"`` (``e^lam beta_j^2 / 2``).
    """
    kind: PenaltyKind

    def __post_init__(self):
        object.__setattr__(self, "kind", PenaltyKind(self.kind))

    @property
    def r(self):
        """Number of hyperparameters."""
        return 2 if self.kind is PenaltyKind.ELASTIC_NET else 1

    @property
    def code(self):
        return KIND_CODES[self.kind]

    @property
    def is_sparse(self):
        return self.kind in (PenaltyKind.L1, PenaltyKind.ELASTIC_NET)

    def value(self, beta, lam):
        lam = check_lam(self, lam)
        beta = np.asarray(beta, dtype=float)
        a = np.exp(lam)
        if self.kind is PenaltyKind.L1:
            return a[0] * np.abs(beta).sum()
        if self.kind is PenaltyKind.ELASTIC_NET:
            return a[0] * np.abs(beta).sum() + 0.5 * a[1] * (beta ** 2).sum()
        if self.kind is PenaltyKind.L2:
            return 0.5 * a[0] * (beta ** 2).sum()
        if np.all((beta >= 0) & (beta <= a[0])):
            return 0.
        return np.inf


def check_lam(penalty, lam):
    """Validate a log-hyperparameter against ``penalty`` and return it as a
    float array of length ``penalty.r``."""
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    if lam.ndim != 1 or lam.shape[0] != penalty.r:
        raise DomainError(
            f"{penalty.kind.value} penalty expects {penalty.r} "
            f"hyperparameter(s), got shape {lam.shape}")
    if not np.all(np.isfinite(lam)):
        raise DomainError(f"non-finite hyperparameter {lam}")
    return lam


def soft_threshold(z, thresh):
    return np.sign(z) * np.maximum(np.abs(z) - thresh, 0.)


def prox(penalty, z, gamma, lam):
    """Proximal operator of ``gamma * g_j(., lam)``, applied entrywise.

    Parameters
    ----------
    penalty : Penalty
    z : float or ndarray
    gamma : float or ndarray
        Step size(s), broadcast against ``z``.
    lam : array-like of length ``penalty.r``

    Returns
    -------
    float or ndarray
    """
    z, gamma, lam = _check_inputs(penalty, z, gamma, lam)
    a = np.exp(lam)
    kind = penalty.kind
    if kind is PenaltyKind.L1:
        out = soft_threshold(z, gamma * a[0])
    elif kind is PenaltyKind.ELASTIC_NET:
        out = soft_threshold(z, gamma * a[0]) / (1. + gamma * a[1])
    elif kind is PenaltyKind.L2:
        out = z / (1. + gamma * a[0])
    else:
        out = np.clip(z, 0., a[0])
    return out[()] if out.ndim == 0 else out


def prox_derivatives(penalty, z, gamma, lam):
    """Partial derivatives of the proximal operator of ``gamma * g_j``.

    At kinks the weak derivative with ``sign(0) = 0`` is returned, ie
    ``dz = 0`` at ``|z| = gamma e^lam`` (L1) and at ``z in {0, e^lam}`` (box).

    Returns
    -------
    dz : float or ndarray, same shape as ``z``
        Derivative with respect to ``z``, in ``[0, 1]``.
    dlam : ndarray of shape ``z.shape + (r,)``
        Derivative with respect to each log-hyperparameter.
    """
    z, gamma, lam = _check_inputs(penalty, z, gamma, lam)
    a = np.exp(lam)
    kind = penalty.kind
    z, gamma = np.broadcast_arrays(z, gamma)
    dlam = np.zeros(z.shape + (penalty.r,))
    if kind is PenaltyKind.L1:
        s = np.sign(soft_threshold(z, gamma * a[0]))
        dz = np.abs(s)
        dlam[..., 0] = -gamma * a[0] * s
    elif kind is PenaltyKind.ELASTIC_NET:
        st = soft_threshold(z, gamma * a[0])
        s = np.sign(st)
        denom = 1. + gamma * a[1]
        dz = np.abs(s) / denom
        dlam[..., 0] = -gamma * a[0] * s / denom
        dlam[..., 1] = -st * gamma * a[1] / denom ** 2
    elif kind is PenaltyKind.L2:
        denom = 1. + gamma * a[0]
        dz = np.ones_like(z) / denom
        dlam[..., 0] = -z * gamma * a[0] / denom ** 2
    else:
        dz = ((z > 0.) & (z < a[0])).astype(float)
        dlam[..., 0] = a[0] * (z > a[0])
    if dz.ndim == 0:
        return dz[()], dlam
    return dz, dlam


def in_generalized_support(penalty, beta, lam):
    """Whether ``g_j(., lam)`` has a singleton subdifferential at ``beta``.

    Works entrywise on arrays.
    """
    lam = check_lam(penalty, lam)
    beta = np.asarray(beta, dtype=float)
    kind = penalty.kind
    if kind in (PenaltyKind.L1, PenaltyKind.ELASTIC_NET):
        out = beta != 0
    elif kind is PenaltyKind.BOX:
        out = (beta > 0) & (beta < np.exp(lam[0]))
    else:
        out = np.ones(beta.shape, dtype=bool)
    return out[()] if out.ndim == 0 else out


def generalized_support(penalty, beta, lam):
    """Sorted indices of the generalized support of ``beta``."""
    return np.flatnonzero(in_generalized_support(penalty, beta, lam))


def lambda_max(datafit_kind, X, y):
    """Log of the smallest L1 strength for which the solution is zero.

    Parameters
    ----------
    datafit_kind : str
        ``"quadratic"`` or ``"logistic"``.
    X : SparseDesign, scipy sparse matrix or ndarray of shape (n, p)
    y : ndarray of shape (n,)
    """
    from .datafit import DatafitKind, SparseDesign
    kind = DatafitKind(datafit_kind)
    if kind is DatafitKind.SVM_DUAL:
        raise DomainError("lambda_max is undefined for the dual SVM")
    X = SparseDesign.from_any(X)
    y = np.asarray(y, dtype=float)
    if X.n == 0 or X.p == 0:
        raise DomainError("empty design matrix")
    corr = np.max(np.abs(X.csc.T @ y)) / X.n
    if kind is DatafitKind.LOGISTIC:
        corr /= 2.
    if corr == 0:
        raise DomainError("degenerate target: X^T y is zero, lambda_max = -inf")
    return float(np.log(corr))


def _check_inputs(penalty, z, gamma, lam):
    lam = check_lam(penalty, lam)
    z = np.asarray(z, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    if not np.all(np.isfinite(z)):
        raise DomainError("non-finite input to prox")
    if np.any(gamma <= 0):
        raise DomainError("gamma must be positive")
    return z, gamma, lam
