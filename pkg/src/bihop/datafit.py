"""Smooth data-fitting terms: values, gradients, Hessian blocks, Lipschitz
constants.

Each datafit is represented through a linear map ``M`` and a separable
function ``phi``: ``f(beta) = sum_i phi_i((M beta)_i) + c^T beta``.

=================  ====================  ======================================
kind               ``M``                 ``phi_i(t)``
=================  ====================  ======================================
quadratic          ``X`` (n x p)         ``(t - y_i)^2 / (2n)``
logistic           ``X`` (n x p)         ``log(1 + exp(-y_i t)) / n``
svm_dual           ``(y * X)^T`` (p x n) ``t^2 / 2``, with ``c = -1``
=================  ====================  ======================================

For the dual SVM the optimization variable lives in ``R^n``.
"""
from enum import Enum

import numpy as np
import scipy.sparse as sp

from . import _kernels


class DatafitKind(str, Enum):
    QUADRATIC = "quadratic"
    LOGISTIC = "logistic"
    SVM_DUAL = "svm_dual"


KIND_CODES = {DatafitKind.QUADRATIC: 0, DatafitKind.LOGISTIC: 1,
              DatafitKind.SVM_DUAL: 2}

POWER_MAX_ITER = 100
POWER_TOL = 1e-10
LIPSCHITZ_SAFETY = 1 + 1e-6
DENSE_SPECTRUM_MAX = 500


class StaleStateError(RuntimeError):
    """The cached residual state no longer matches the coefficients."""


class SparseDesign:
    """Compressed sparse design matrix with cached squared column norms.

    Both column- and row-compressed copies are kept: solvers walk columns,
    reverse-mode sweeps walk rows.
    """

    def __init__(self, X):
        if sp.issparse(X):
            X = sp.csc_matrix(X, dtype=float)
        else:
            X = np.asarray(X, dtype=float)
            if X.ndim != 2:
                raise ValueError(f"design must be 2-D, got shape {X.shape}")
            X = sp.csc_matrix(X)
        X.sum_duplicates()
        X.sort_indices()
        if not np.all(np.isfinite(X.data)):
            raise ValueError("design contains NaN or Inf")
        self.csc = X
        self.csr = X.tocsr()
        self.col_sqnorms = np.asarray(X.multiply(X).sum(axis=0)).ravel()

    @classmethod
    def from_any(cls, X):
        return X if isinstance(X, cls) else cls(X)

    @property
    def shape(self):
        return self.csc.shape

    @property
    def n(self):
        return self.csc.shape[0]

    @property
    def p(self):
        return self.csc.shape[1]

    @property
    def nnz(self):
        return self.csc.nnz

    @property
    def values(self):
        return self.csc.data

    @property
    def indices(self):
        return self.csc.indices

    @property
    def offsets(self):
        return self.csc.indptr

    def __matmul__(self, other):
        return self.csc @ other

    def toarray(self):
        return self.csc.toarray()

    def take_rows(self, rows):
        return SparseDesign(self.csr[np.asarray(rows)])


class ResidualState:
    """Solver-owned cache of ``M beta``, updated per coordinate step."""

    def __init__(self, r, beta):
        self.r = r
        self._fingerprint = _fingerprint(beta)

    def update(self, df, j, delta, beta):
        M = df.M
        sl = slice(M.indptr[j], M.indptr[j + 1])
        self.r[M.indices[sl]] += M.data[sl] * delta
        self._fingerprint = _fingerprint(beta)

    def check(self, beta):
        if _fingerprint(beta) != self._fingerprint:
            raise StaleStateError("residual state does not match beta")


def _fingerprint(beta):
    beta = np.asarray(beta, dtype=float)
    return hash(beta.tobytes())


class Datafit:
    """A smooth data-fitting term ``f``.

    Parameters
    ----------
    kind : {"quadratic", "logistic", "svm_dual"}
    X : array-like or sparse matrix of shape (n, p)
    y : ndarray of shape (n,)
        Targets; labels must be in ``{-1, +1}`` for the classification kinds.
    """

    def __init__(self, kind, X, y):
        self.kind = DatafitKind(kind)
        self.X = SparseDesign.from_any(X)
        y = np.asarray(y, dtype=float).ravel()
        if y.shape[0] != self.X.n:
            raise ValueError(
                f"X has {self.X.n} rows but y has {y.shape[0]} entries")
        if not np.all(np.isfinite(y)):
            raise ValueError("targets contain NaN or Inf")
        if self.kind is not DatafitKind.QUADRATIC and \
                not np.all(np.isin(y, (-1., 1.))):
            raise ValueError(f"{self.kind.value} datafit needs labels in {{-1, 1}}")
        self.y = y
        if self.kind is DatafitKind.SVM_DUAL:
            self.M = sp.csc_matrix(self.X.csr.multiply(y[:, None]).T)
            self.M.sort_indices()
            # phi does not depend on targets in the dual
            self._phi_y = np.zeros(self.M.shape[0])
            self.n_norm = 1.
        else:
            self.M = self.X.csc
            self._phi_y = y
            self.n_norm = float(self.X.n)
        self.M_csr = self.M.tocsr()
        self.M_csr.sort_indices()
        self.code = KIND_CODES[self.kind]
        self._lipschitz = None

    @property
    def n_features(self):
        """Dimension of the optimization variable."""
        return self.M.shape[1]

    @property
    def linear_coef(self):
        return -1. if self.kind is DatafitKind.SVM_DUAL else 0.

    # --- pointwise pieces ---------------------------------------------------
    def _phi(self, r):
        if self.kind is DatafitKind.QUADRATIC:
            return 0.5 * np.sum((r - self.y) ** 2) / self.n_norm
        if self.kind is DatafitKind.LOGISTIC:
            return np.sum(np.logaddexp(0., -self.y * r)) / self.n_norm
        return 0.5 * np.dot(r, r)

    def _phi1(self, r, rows=None):
        y = self.y if rows is None else self.y[rows]
        if self.kind is DatafitKind.QUADRATIC:
            return (r - y) / self.n_norm
        if self.kind is DatafitKind.LOGISTIC:
            return -y * _sigmoid(-y * r) / self.n_norm
        return r

    def _phi2(self, r):
        if self.kind is DatafitKind.QUADRATIC:
            return np.full(r.shape, 1. / self.n_norm)
        if self.kind is DatafitKind.LOGISTIC:
            s = _sigmoid(self.y * r)
            return s * (1. - s) / self.n_norm
        return np.ones(r.shape)

    # --- public API ---------------------------------------------------------
    def _check_beta(self, beta):
        beta = np.asarray(beta, dtype=float)
        if beta.shape != (self.n_features,):
            raise ValueError(
                f"expected beta of shape ({self.n_features},), got {beta.shape}")
        return beta

    def value(self, beta):
        beta = self._check_beta(beta)
        return self._phi(self.M @ beta) + self.linear_coef * beta.sum()

    def grad(self, beta):
        """Full gradient of ``f`` at ``beta``."""
        beta = self._check_beta(beta)
        return self.M.T @ self._phi1(self.M @ beta) + self.linear_coef

    def grad_from_state(self, r):
        return self.M.T @ self._phi1(r) + self.linear_coef

    def init_state(self, beta):
        beta = self._check_beta(beta)
        return ResidualState(self.M @ beta, beta)

    def grad_coord(self, beta, state, j):
        """``grad(beta)[j]`` in O(nnz of column j), using the cached state."""
        if __debug__:
            state.check(beta)
        M = self.M
        sl = slice(M.indptr[j], M.indptr[j + 1])
        rows = M.indices[sl]
        return M.data[sl] @ self._phi1(state.r[rows], rows) + self.linear_coef

    def hessian_vec(self, beta, V):
        """``hess(beta) @ V`` without forming the Hessian; ``V`` is (p,) or
        (p, k)."""
        r = self.M @ self._check_beta(beta)
        return self.hessian_vec_from_state(r, V)

    def hessian_vec_from_state(self, r, V):
        w = self._phi2(r)
        MV = self.M @ V
        if MV.ndim == 2:
            return self.M.T @ (w[:, None] * MV)
        return self.M.T @ (w * MV)

    def hessian_block(self, beta, rows, cols):
        """Dense block ``hess(beta)[rows][:, cols]``."""
        rows = np.asarray(rows, dtype=int)
        cols = np.asarray(cols, dtype=int)
        p = self.n_features
        for idx in (rows, cols):
            if idx.size and (idx.min() < 0 or idx.max() >= p):
                raise IndexError(f"indices out of range [0, {p})")
        w = self._phi2(self.M @ self._check_beta(beta))
        Mr = self.M[:, rows]
        Mc = self.M[:, cols]
        block = Mr.T @ sp.diags(w) @ Mc
        return np.asarray(block.toarray() if sp.issparse(block) else block)

    def lipschitz(self):
        """Global and coordinate-wise Lipschitz constants of ``grad f``.

        Returns
        -------
        L : float
            Largest curvature. Exact (dense eigensolver) when the smaller
            side of the design is at most ``DENSE_SPECTRUM_MAX``, otherwise a
            power-iteration estimate inflated by ``LIPSCHITZ_SAFETY``.
        Lj : ndarray of shape (p,)
            Zero for all-zero columns; solvers freeze those coordinates.
        """
        if self._lipschitz is None:
            scale = {DatafitKind.QUADRATIC: 1. / self.n_norm,
                     DatafitKind.LOGISTIC: 0.25 / self.n_norm,
                     DatafitKind.SVM_DUAL: 1.}[self.kind]
            sqnorms = np.asarray(self.M.multiply(self.M).sum(axis=0)).ravel()
            Lj = scale * sqnorms
            if min(self.M.shape) <= DENSE_SPECTRUM_MAX:
                L = scale * _top_eigenvalue(self.M)
            else:
                L = scale * power_iteration(self.M) * LIPSCHITZ_SAFETY
            self._lipschitz = (float(L), Lj)
        L, Lj = self._lipschitz
        return L, Lj.copy()


def _top_eigenvalue(M):
    M = M.toarray() if sp.issparse(M) else np.asarray(M)
    G = M.T @ M if M.shape[1] <= M.shape[0] else M @ M.T
    return float(max(np.linalg.eigvalsh(G)[-1], 0.))


def power_iteration(M, max_iter=POWER_MAX_ITER, tol=POWER_TOL):
    """Largest eigenvalue of ``M^T M`` by power iteration.

    The start vector is deterministic (all ones, with a fallback on a fixed
    seeded draw if it is in the null space).
    """
    p = M.shape[1]
    if M.nnz == 0 if sp.issparse(M) else not np.any(M):
        return 0.
    u = np.ones(p) / np.sqrt(p)
    if np.linalg.norm(M @ u) == 0:
        u = np.random.default_rng(0).standard_normal(p)
        u /= np.linalg.norm(u)
    est = 0.
    for _ in range(max_iter):
        w = M.T @ (M @ u)
        new = float(u @ w)
        nrm = np.linalg.norm(w)
        if nrm == 0:
            return 0.
        u = w / nrm
        if abs(new - est) <= tol * abs(new):
            est = new
            break
        est = new
    return est


def _sigmoid(x):
    return np.exp(-np.logaddexp(0., -x))
