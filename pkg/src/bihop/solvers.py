"""Proximal gradient descent and proximal coordinate descent.

Both solvers stop on a sup-norm fixed-point residual
``||beta - prox_{gamma g}(beta - gamma grad f(beta))||_inf`` taken with their
own step sizes: ``gamma = 1 / L`` for PGD and, coordinate-wise,
``gamma_j = 1 / L_j`` for PCD.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from . import _kernels
from .datafit import Datafit, DatafitKind
from .prox import (Penalty, PenaltyKind, check_lam, in_generalized_support,
                   prox, prox_derivatives)


class Algo(str, Enum):
    PGD = "pgd"
    PCD = "pcd"


@dataclass
class SolverConfig:
    """Inner solver settings.

    ``max_epochs = 0`` is accepted and returns the initial point untouched;
    the iterative differentiation engines use it as the empty unrolling.
    """
    algo: Algo = Algo.PCD
    max_epochs: int = 10_000
    tol: float = 1e-10
    record_iterates: bool = False
    beta0: Optional[np.ndarray] = None

    def __post_init__(self):
        self.algo = Algo(self.algo)
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be non-negative")


@dataclass
class Solution:
    beta: np.ndarray
    support: np.ndarray
    epochs_run: int
    stop_metric: float
    converged: bool
    identified_at: Optional[int] = None
    iterates: list = field(default_factory=list)


def objective(df, pen, lam, beta):
    """Inner objective ``f(beta) + g(beta, lam)``."""
    return df.value(beta) + pen.value(beta, lam)


def fixed_point_residual(df, pen, lam, beta, algo=Algo.PGD):
    """``||beta - prox_{gamma g}(beta - gamma grad f(beta))||_inf``, zero
    exactly at minimizers; ``gamma`` is ``1 / L`` for PGD and the vector of
    ``1 / L_j`` for PCD."""
    L, Lj = df.lipschitz()
    beta = np.asarray(beta, dtype=float)
    if Algo(algo) is Algo.PGD:
        if L == 0:
            return 0.
        gamma = 1. / L
        return float(np.max(np.abs(
            beta - prox(pen, beta - gamma * df.grad(beta), gamma, lam)),
            initial=0.))
    return _fp_residual_from_state(df, pen, lam, beta,
                                   df.init_state(beta).r, _pcd_steps(Lj))


def lasso_duality_gap(df, lam, beta):
    """Duality gap of the Lasso ``||y - X beta||^2 / 2n + e^lam ||beta||_1``."""
    if df.kind is not DatafitKind.QUADRATIC:
        raise ValueError("duality gap is implemented for the Lasso only")
    alpha = np.exp(check_lam(Penalty("l1"), lam)[0])
    n = df.X.n
    y = df.y
    rho = y - df.X @ beta
    primal = rho @ rho / (2 * n) + alpha * np.abs(beta).sum()
    scale = max(1., np.max(np.abs(df.X.csc.T @ rho)) / (n * alpha))
    theta = rho / scale
    dual = (y @ y - (y - theta) @ (y - theta)) / (2 * n)
    return float(primal - dual)


def _status(pen, beta, lam):
    """Identification signature: support membership plus, for the box, which
    bound is active off the support."""
    mask = in_generalized_support(pen, beta, lam)
    if pen.kind is PenaltyKind.BOX:
        return mask.astype(np.int8) + 2 * (beta >= np.exp(lam[0]))
    return mask.astype(np.int8)


class _Tracker:
    """Tracks residuals, identification and optional iterate snapshots."""

    def __init__(self, pen, lam, record, beta0):
        self.pen, self.lam, self.record = pen, lam, record
        self.prev = _status(pen, beta0, lam)
        self.last_change = 0
        self.iterates = []
        self.supports = []

    def step(self, epoch, beta, z):
        status = _status(self.pen, beta, self.lam)
        if not np.array_equal(status, self.prev):
            self.last_change = epoch
        self.prev = status
        if self.record:
            self.iterates.append((epoch, beta.copy(), z.copy()))
            self.supports.append(status != 0 if self.pen.kind is not
                                 PenaltyKind.BOX else status == 1)


def _pcd_steps(Lj):
    # coordinates with L_j = 0 never move and get a zero step
    return np.divide(1., Lj, out=np.zeros_like(Lj), where=Lj > 0)


def _fp_residual_from_state(df, pen, lam, beta, r, gamma):
    g = df.grad_from_state(r)
    if np.ndim(gamma):
        live = gamma > 0
        if not live.all():
            beta, g, gamma = beta[live], g[live], gamma[live]
    return float(np.max(np.abs(beta - prox(pen, beta - gamma * g, gamma, lam)),
                        initial=0.))


def _init(df, pen, lam, cfg):
    if not isinstance(df, Datafit):
        raise TypeError("df must be a Datafit")
    lam = check_lam(pen, lam)
    p = df.n_features
    if cfg.beta0 is None:
        beta = np.zeros(p)
    else:
        beta = np.array(cfg.beta0, dtype=float)
        if beta.shape != (p,):
            raise ValueError(f"beta0 must have shape ({p},)")
    return lam, beta


def run_pgd(df, pen, lam, cfg, jac_cols=0, store=False, monitor=None):
    """Proximal gradient loop, optionally propagating a Jacobian forward and
    storing what a reverse sweep needs.

    Returns ``(solution, jac, stored)`` where ``stored`` is a list of
    ``(beta_prev, z)`` pairs, one per iteration.
    """
    lam, beta = _init(df, pen, lam, cfg)
    L, _ = df.lipschitz()
    if L <= 0:
        raise ValueError("datafit has zero curvature; PGD needs L > 0")
    gamma = 1. / L
    p = df.n_features
    jac = np.zeros((p, jac_cols)) if jac_cols else None
    stored = []
    tracker = _Tracker(pen, lam, cfg.record_iterates, beta)
    res = np.inf
    converged = False
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        r = df.M @ beta
        z = beta - gamma * df.grad_from_state(r)
        if jac is not None:
            dz = jac - gamma * df.hessian_vec_from_state(r, jac)
        if store:
            stored.append((beta.copy(), z.copy()))
        new = prox(pen, z, gamma, lam)
        if jac is not None:
            a, b = prox_derivatives(pen, z, gamma, lam)
            jac = a[:, None] * dz + b
        res = float(np.max(np.abs(new - beta), initial=0.))
        beta = new
        tracker.step(epoch, beta, z)
        if monitor is not None:
            monitor(epoch, beta, jac)
        if res <= cfg.tol:
            converged = True
            break
    if cfg.max_epochs == 0:
        res = fixed_point_residual(df, pen, lam, beta)
        converged = res <= cfg.tol
    sol = _make_solution(pen, lam, beta, epoch, res, converged, tracker)
    return sol, jac, stored


def run_pcd(df, pen, lam, cfg, jac_cols=0, store=False, monitor=None):
    """Cyclic proximal coordinate descent loop with ``gamma_j = 1 / L_j``.

    Returns ``(solution, jac, stored)``; ``stored`` is ``(zs, deltas, r)``
    with ``zs`` and ``deltas`` of shape ``(epochs, p)`` and ``r`` the final
    cached ``M beta``.
    """
    lam, beta = _init(df, pen, lam, cfg)
    _, Lj = df.lipschitz()
    if not np.any(Lj > 0):
        raise ValueError("all coordinates have zero curvature")
    # frozen coordinates get a zero step, hence a zero residual
    gamma = _pcd_steps(Lj)
    p = df.n_features
    M = df.M
    r = M @ beta
    n_hyper = max(jac_cols, 1)
    jac = np.zeros((p, n_hyper))
    dr = np.zeros((M.shape[0], n_hyper))
    zs, deltas = [], []
    z_out = np.zeros(p)
    delta_out = np.zeros(p)
    tracker = _Tracker(pen, lam, cfg.record_iterates, beta)
    res = np.inf
    converged = False
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        _kernels.pcd_epoch(M.data, M.indices, M.indptr, df._phi_y, df.n_norm,
                           df.code, pen.code, lam, beta, r, Lj, jac, dr,
                           jac_cols > 0, z_out, delta_out)
        if store:
            zs.append(z_out.copy())
            deltas.append(delta_out.copy())
        res = _fp_residual_from_state(df, pen, lam, beta, r, gamma)
        tracker.step(epoch, beta, z_out)
        if monitor is not None:
            monitor(epoch, beta, jac if jac_cols else None)
        if res <= cfg.tol:
            converged = True
            break
    if cfg.max_epochs == 0:
        res = _fp_residual_from_state(df, pen, lam, beta, r, gamma)
        converged = res <= cfg.tol
    sol = _make_solution(pen, lam, beta, epoch, res, converged, tracker)
    stored = None
    if store:
        stored = (np.array(zs).reshape(-1, p), np.array(deltas).reshape(-1, p),
                  r)
    return sol, (jac if jac_cols else None), stored


def _make_solution(pen, lam, beta, epochs, res, converged, tracker):
    support = np.flatnonzero(in_generalized_support(pen, beta, lam))
    return Solution(beta=beta, support=support, epochs_run=epochs,
                    stop_metric=res, converged=converged,
                    identified_at=tracker.last_change if epochs else None,
                    iterates=tracker.iterates)


def solve_pgd(df, pen, lam, cfg=None):
    """Solve ``min_beta f(beta) + g(beta, lam)`` by proximal gradient descent
    with step ``1 / L``.

    Non-convergence within ``cfg.max_epochs`` is reported through
    ``Solution.converged``, not raised.
    """
    cfg = cfg or SolverConfig(algo=Algo.PGD)
    return run_pgd(df, pen, lam, cfg)[0]


def solve_pcd(df, pen, lam, cfg=None):
    """Solve ``min_beta f(beta) + g(beta, lam)`` by cyclic proximal coordinate
    descent with steps ``1 / L_j``; zero-curvature coordinates are frozen."""
    cfg = cfg or SolverConfig()
    return run_pcd(df, pen, lam, cfg)[0]


def solve(df, pen, lam, cfg=None):
    cfg = cfg or SolverConfig()
    if cfg.algo is Algo.PGD:
        return solve_pgd(df, pen, lam, cfg)
    return solve_pcd(df, pen, lam, cfg)
