"""Hypergradient engines.

Given an inner problem ``beta(lam) = argmin f(beta) + g(beta, lam)`` and an
outer criterion ``C``, every engine returns ``J^T grad C(beta)`` where ``J`` is
the Jacobian of ``lam -> beta(lam)``:

* ``forward_pgd`` / ``forward_pcd`` propagate ``J`` alongside the iterates;
* ``backward_pgd`` / ``backward_pcd`` store the iterates and sweep back;
* ``implicit`` differentiates the proximal-gradient fixed point at the
  solution, which only needs a linear system on the generalized support.
"""
import time
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import LinearOperator, cg

from . import _kernels
from .prox import check_lam, generalized_support, prox_derivatives
from .solvers import Algo, SolverConfig, run_pcd, run_pgd

DENSE_SYSTEM_MAX = 2000
PINV_RCOND = 1e-10
ENGINES = ("implicit", "forward_pcd", "forward_pgd", "backward_pcd",
           "backward_pgd")


class CapacityError(MemoryError):
    """Iterate storage of a reverse-mode engine could not be allocated."""


class NonConvergenceError(RuntimeError):
    pass


class RestrictedInjectivityWarning(RuntimeWarning):
    """The support-restricted fixed-point map is not a strict contraction."""


@dataclass
class HypergradReport:
    beta: np.ndarray
    hypergrad: np.ndarray
    value: float
    support: np.ndarray
    jacobian: Optional[np.ndarray] = None
    jac_trace: Optional[np.ndarray] = None
    converged: bool = True
    diagnostics: dict = field(default_factory=dict)


class _Monitor:
    def __init__(self, beta_ref, jac_ref, pen, lam):
        self.beta_ref, self.jac_ref = beta_ref, jac_ref
        self.pen, self.lam = pen, lam
        self.rows = []

    def __call__(self, epoch, beta, jac):
        row = {"epoch": epoch,
               "support_size": int(generalized_support(
                   self.pen, beta, self.lam).size)}
        if self.beta_ref is not None:
            row["beta_err"] = float(np.linalg.norm(beta - self.beta_ref))
        if self.jac_ref is not None and jac is not None:
            row["jac_err"] = float(np.linalg.norm(jac - self.jac_ref))
        self.rows.append(row)


def _report(sol, crit, h, jac, mon, t0, **diag):
    value = crit.value(sol.beta)
    jac_trace = None
    if mon is not None and mon.jac_ref is not None:
        jac_trace = np.array([row["jac_err"] for row in mon.rows])
    diagnostics = {"epochs": sol.epochs_run, "stop_metric": sol.stop_metric,
                   "inner_converged": sol.converged,
                   "identified_at": sol.identified_at,
                   "wall_ms": 1e3 * (time.perf_counter() - t0)}
    if mon is not None:
        diagnostics["trace"] = mon.rows
    diagnostics.update(diag)
    return HypergradReport(beta=sol.beta, hypergrad=np.asarray(h, dtype=float),
                           value=value, support=sol.support, jacobian=jac,
                           jac_trace=jac_trace, converged=sol.converged,
                           diagnostics=diagnostics)


def _monitor(beta_ref, jac_ref, pen, lam):
    if beta_ref is None and jac_ref is None:
        return None
    return _Monitor(beta_ref, jac_ref, pen, lam)


def forward_pgd(df, pen, lam, crit, cfg=None, beta_ref=None, jac_ref=None):
    """Forward-mode differentiation of proximal gradient descent.

    ``beta_ref``/``jac_ref`` (exact solution and Jacobian) turn on per-epoch
    distance monitoring.
    """
    t0 = time.perf_counter()
    lam = check_lam(pen, lam)
    cfg = cfg or SolverConfig(algo=Algo.PGD)
    mon = _monitor(beta_ref, jac_ref, pen, lam)
    sol, jac, _ = run_pgd(df, pen, lam, cfg, jac_cols=pen.r, monitor=mon)
    if jac is None:
        jac = np.zeros((df.n_features, pen.r))
    h = jac.T @ crit.grad(sol.beta)
    return _report(sol, crit, h, jac, mon, t0)


def forward_pcd(df, pen, lam, crit, cfg=None, beta_ref=None, jac_ref=None):
    """Forward-mode differentiation of cyclic proximal coordinate descent."""
    t0 = time.perf_counter()
    lam = check_lam(pen, lam)
    cfg = cfg or SolverConfig(algo=Algo.PCD)
    mon = _monitor(beta_ref, jac_ref, pen, lam)
    sol, jac, _ = run_pcd(df, pen, lam, cfg, jac_cols=pen.r, monitor=mon)
    h = jac.T @ crit.grad(sol.beta)
    return _report(sol, crit, h, jac, mon, t0)


def backward_pgd(df, pen, lam, crit, cfg=None):
    """Reverse-mode differentiation of proximal gradient descent.

    One ``(beta^{k-1}, z^k)`` pair is stored per iteration.
    """
    t0 = time.perf_counter()
    lam = check_lam(pen, lam)
    cfg = cfg or SolverConfig(algo=Algo.PGD)
    try:
        sol, _, stored = run_pgd(df, pen, lam, cfg, store=True)
    except MemoryError as e:
        raise CapacityError(
            f"cannot store iterates for up to {cfg.max_epochs} epochs") from e
    gamma = 1. / df.lipschitz()[0]
    v = crit.grad(sol.beta)
    h = np.zeros(pen.r)
    for beta_prev, z in reversed(stored):
        a, b = prox_derivatives(pen, z, gamma, lam)
        h += b.T @ v
        v = a * v
        v = v - gamma * df.hessian_vec(beta_prev, v)
    return _report(sol, crit, h, None, None, t0, stored_iterates=len(stored))


def backward_pcd(df, pen, lam, crit, cfg=None):
    """Reverse-mode differentiation of cyclic proximal coordinate descent.

    Rather than every intermediate ``beta^{(k, j)}``, only the scalars
    ``z_j^{(k)}`` and coordinate increments are kept; the reverse sweep
    rewinds the cached ``M beta`` to evaluate each Hessian row exactly.
    """
    t0 = time.perf_counter()
    lam = check_lam(pen, lam)
    cfg = cfg or SolverConfig(algo=Algo.PCD)
    try:
        sol, _, (zs, deltas, r) = run_pcd(df, pen, lam, cfg, store=True)
    except MemoryError as e:
        raise CapacityError(
            f"cannot store iterates for up to {cfg.max_epochs} epochs") from e
    _, Lj = df.lipschitz()
    v = np.array(crit.grad(sol.beta), dtype=float)
    h = np.zeros(pen.r)
    M, Mr = df.M, df.M_csr
    _kernels.pcd_backward(M.data, M.indices, M.indptr, Mr.data, Mr.indices,
                          Mr.indptr, df._phi_y, df.n_norm, df.code, pen.code,
                          lam, r.copy(), Lj, zs, deltas, v, h)
    return _report(sol, crit, h, None, None, t0, stored_z=int(zs.size))


def _solve_system(A, rhs, tol):
    """Solve ``A x = rhs`` (``rhs`` 1-D or 2-D); dense LU for small systems,
    CG on the normal equations above ``DENSE_SYSTEM_MAX``."""
    s = A.shape[0]
    if s <= DENSE_SYSTEM_MAX:
        # a support estimated from a loose inner solve can make A singular
        # (e.g. more Lasso actives than samples); fall back to min-norm
        with warnings.catch_warnings():
            warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
            try:
                return scipy.linalg.solve(A, rhs), 0
            except (scipy.linalg.LinAlgError, scipy.linalg.LinAlgWarning):
                return scipy.linalg.lstsq(A, rhs, cond=PINV_RCOND)[0], -1
    op = LinearOperator((s, s), matvec=lambda x: A.T @ (A @ x), dtype=float)
    cols = rhs[:, None] if rhs.ndim == 1 else rhs
    out = np.empty_like(cols)
    iters = 0
    for t in range(cols.shape[1]):
        counter = []
        out[:, t], info = cg(op, A.T @ cols[:, t], rtol=tol, maxiter=10 * s,
                             callback=counter.append)
        iters += len(counter)
    return (out[:, 0] if rhs.ndim == 1 else out), iters


def implicit(df, pen, lam, crit, cfg=None, linsys_tol=1e-10):
    """Implicit differentiation restricted to the generalized support.

    The inner problem is solved to ``cfg.tol``; the Jacobian is then
    ``J[S^c] = d_lam prox(z)[S^c]`` off the support and the solution of an
    ``|S| x |S|`` system on it, with ``z = beta - grad f(beta) / L``.
    """
    t0 = time.perf_counter()
    lam = check_lam(pen, lam)
    cfg = cfg or SolverConfig()
    sol = (run_pgd if cfg.algo is Algo.PGD else run_pcd)(df, pen, lam, cfg)[0]
    beta = sol.beta
    p = df.n_features
    L, _ = df.lipschitz()
    gamma = 1. / L
    z = beta - gamma * df.grad(beta)
    a, b = prox_derivatives(pen, z, gamma, lam)
    S = generalized_support(pen, beta, lam)
    Sc = np.setdiff1d(np.arange(p), S, assume_unique=True)
    s = S.size
    grad_c = crit.grad(beta)
    jac = np.zeros((p, pen.r))
    jac[Sc] = b[Sc]
    h = jac[Sc].T @ grad_c[Sc]
    diag = {"linsys_dim": s, "linsys_iters": 0, "contraction": None,
            "linsys_residual": 0.}
    if s == 0:
        return _report(sol, crit, h, jac, None, t0, **diag)

    H_SS = df.hessian_block(beta, S, S)
    inner = np.eye(s) - gamma * H_SS
    A = np.eye(s) - a[S, None] * inner
    if s <= DENSE_SYSTEM_MAX:
        contraction = np.max(np.abs(a[S])) * np.max(np.abs(
            np.linalg.eigvalsh(inner)))
        diag["contraction"] = float(contraction)
        if contraction >= 1:
            warnings.warn(
                f"support-restricted contraction factor {contraction:.3g} "
                ">= 1: restricted injectivity fails, Jacobian may be "
                "ill-defined", RestrictedInjectivityWarning, stacklevel=2)
    B = b[S].copy()
    if np.any(jac[Sc]):
        full = np.zeros((p, pen.r))
        full[Sc] = jac[Sc]
        B -= gamma * a[S, None] * df.hessian_vec(beta, full)[S]
    v, iters = _solve_system(A.T, grad_c[S], linsys_tol)
    residual = float(np.linalg.norm(A.T @ v - grad_c[S]))
    diag.update(linsys_iters=max(iters, 0), linsys_residual=residual,
                linsys_method="lstsq" if iters < 0 else
                ("lu" if s <= DENSE_SYSTEM_MAX else "cg"))
    if residual > max(linsys_tol, 1e-8) * (1 + np.linalg.norm(grad_c[S])):
        diag["linsys_converged"] = False
    h = h + B.T @ v
    jac[S], _ = _solve_system(A, B, linsys_tol)
    rep = _report(sol, crit, h, jac, None, t0, **diag)
    if diag.get("linsys_converged") is False:
        rep.converged = False
    return rep


def compute(engine, df, pen, lam, crit, cfg=None, **kwargs):
    """Dispatch to an engine by name."""
    funcs = {"implicit": implicit, "forward_pcd": forward_pcd,
             "forward_pgd": forward_pgd, "backward_pcd": backward_pcd,
             "backward_pgd": backward_pgd}
    if engine not in funcs:
        raise ValueError(f"unknown engine {engine!r}; expected one of {ENGINES}")
    if cfg is not None and engine.endswith("pgd") and cfg.algo is not Algo.PGD:
        cfg = SolverConfig(algo=Algo.PGD, max_epochs=cfg.max_epochs,
                           tol=cfg.tol, beta0=cfg.beta0)
    if cfg is not None and engine.endswith("pcd") and cfg.algo is not Algo.PCD:
        cfg = SolverConfig(algo=Algo.PCD, max_epochs=cfg.max_epochs,
                           tol=cfg.tol, beta0=cfg.beta0)
    return funcs[engine](df, pen, lam, crit, cfg, **kwargs)


def criterion_at(df, pen, lam, crit, cfg):
    """``C(beta(lam))`` with the inner problem solved per ``cfg``; raises if
    the solver does not converge."""
    sol = (run_pgd if cfg.algo is Algo.PGD else run_pcd)(df, pen, lam, cfg)[0]
    if not sol.converged:
        raise NonConvergenceError(
            f"inner solver did not reach tol={cfg.tol} in "
            f"{cfg.max_epochs} epochs at lam={lam}")
    return crit.value(sol.beta), sol.beta


def finite_diff_hypergrad(df, pen, lam, crit, step=1e-5, inner_tol=1e-12,
                          max_epochs=100_000):
    """Central finite differences of ``lam -> C(beta(lam))``.

    Test oracle: every inner solve must converge to ``inner_tol``, warm
    started from the solution at ``lam``.
    """
    lam = check_lam(pen, lam)
    if step <= 0:
        raise ValueError("step must be positive")
    cfg = SolverConfig(tol=inner_tol, max_epochs=max_epochs)
    _, beta_c = criterion_at(df, pen, lam, crit, cfg)
    warm = SolverConfig(tol=inner_tol, max_epochs=max_epochs, beta0=beta_c)
    out = np.zeros(pen.r)
    for i in range(pen.r):
        e = np.zeros(pen.r)
        e[i] = step
        up, _ = criterion_at(df, pen, lam + e, crit, warm)
        down, _ = criterion_at(df, pen, lam - e, crit, warm)
        out[i] = (up - down) / (2 * step)
    return out
