"""Outer loops over the log-hyperparameters: first-order descent with
approximate hypergradients, grid search and random search."""
import os
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import hypergrad
from .criteria import DualCriterion, HoldoutCriterion
from .datafit import Datafit, DatafitKind
from .prox import Penalty, check_lam, lambda_max
from .solvers import Algo, SolverConfig, run_pcd, run_pgd

# model name -> (datafit kind, penalty kind, default hold-out criterion)
MODELS = {
    "lasso": ("quadratic", "l1", "mse"),
    "enet": ("quadratic", "enet", "mse"),
    "sparse_logreg": ("logistic", "l1", "logistic"),
    "svm": ("svm_dual", "box", "smoothed_hinge"),
}

GRAD_NORM_STOP = 1e-8
TIGHTEN_MAX = 3
TIGHTEN_FLOOR = 1e-12
STEP_UNDERFLOW = 1e-12
LOG_RANGE = np.log(1e4)


class BilevelAbort(RuntimeError):
    """Inner solver failed at the tightest tolerance; ``trace`` holds the
    iterations completed so far."""

    def __init__(self, msg, trace):
        super().__init__(msg)
        self.trace = trace


def n_workers():
    """Worker cap from ``BIHOP_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("BIHOP_THREADS", "1")))
    except ValueError:
        return 1


def default_tol_schedule(n_iters, start=1e-2, stop=1e-6, n_decay=10):
    """Geometric decay from ``start`` to ``stop`` over ``n_decay`` iterations,
    then constant."""
    head = np.geomspace(start, stop, n_decay)
    return [float(head[min(i, n_decay - 1)]) for i in range(n_iters)]


@dataclass
class OuterConfig:
    max_outer_iters: int = 50
    tol_schedule: Optional[Sequence[float]] = None
    lam0: Optional[np.ndarray] = None
    engine: str = "implicit"
    seed: int = 0

    def __post_init__(self):
        if self.engine not in hypergrad.ENGINES:
            raise ValueError(f"unknown engine {self.engine!r}")
        if self.tol_schedule is None:
            self.tol_schedule = default_tol_schedule(self.max_outer_iters)
        sched = np.asarray(self.tol_schedule, dtype=float)
        if np.any(sched <= 0) or np.any(np.diff(sched) > 0):
            raise ValueError("tol_schedule must be positive and non-increasing")
        if len(sched) < self.max_outer_iters:
            sched = np.concatenate([sched, np.full(
                self.max_outer_iters - len(sched), sched[-1])])
        self.tol_schedule = [float(t) for t in sched]


@dataclass
class BilevelTrace:
    method: str
    iterations: list = field(default_factory=list)

    def add(self, lam, value, grad_norm=np.nan, step=np.nan, tol=np.nan,
            epochs=0, wall_ms=0.):
        self.iterations.append({
            "lam": np.array(lam, dtype=float), "value": float(value),
            "grad_norm": float(grad_norm), "step": float(step),
            "tol": float(tol), "epochs": int(epochs),
            "wall_ms": float(wall_ms)})

    @property
    def best(self):
        if not self.iterations:
            return None, np.inf
        it = min(self.iterations, key=lambda row: row["value"])
        return it["lam"], it["value"]

    @property
    def values(self):
        return np.array([row["value"] for row in self.iterations])

    @property
    def lams(self):
        return np.array([row["lam"] for row in self.iterations])


class CrossValObjective:
    """``L(lam) = mean_k C_k(beta_k(lam))`` over independent inner problems.

    A single hold-out split is the ``K = 1`` case.  Inner solves are warm
    started from the previous call's solutions.
    """

    def __init__(self, datafits, criteria, penalty, engine="implicit",
                 algo=Algo.PCD, max_epochs=100_000, n_jobs=None):
        if len(datafits) != len(criteria) or not datafits:
            raise ValueError("need one criterion per datafit")
        self.datafits = list(datafits)
        self.criteria = list(criteria)
        self.penalty = penalty
        self.engine = engine
        self.algo = Algo(algo)
        self.max_epochs = max_epochs
        self.n_jobs = n_jobs or n_workers()
        self._warm = [None] * len(datafits)

    @classmethod
    def from_cv_spec(cls, spec_or_split, model="lasso", criterion=None,
                     **kwargs):
        """Build from a ``CvSpec`` or single ``HoldoutSplit`` for a model in
        ``MODELS``."""
        folds = getattr(spec_or_split, "folds", None) or [spec_or_split]
        df_kind, pen_kind, default_crit = MODELS[model]
        criterion = criterion or default_crit
        dfs, crits = [], []
        for fold in folds:
            df = Datafit(df_kind, fold.X_train, fold.y_train)
            crit = HoldoutCriterion(criterion, fold.X_val, fold.y_val)
            if df.kind is DatafitKind.SVM_DUAL:
                crit = DualCriterion(crit, df)
            dfs.append(df)
            crits.append(crit)
        return cls(dfs, crits, Penalty(pen_kind), **kwargs)

    @property
    def r(self):
        return self.penalty.r

    def lambda_max(self):
        """Largest fold-wise L1 ``lambda_max``; None for the dual SVM."""
        if self.datafits[0].kind is DatafitKind.SVM_DUAL:
            return None
        return max(lambda_max(df.kind, df.X, df.y) for df in self.datafits)

    def default_lam0(self):
        lmax = self.lambda_max()
        start = 0. if lmax is None else lmax - np.log(100.)
        return np.full(self.r, start)

    def _cfg(self, k, tol):
        return SolverConfig(algo=self.algo, tol=tol, max_epochs=self.max_epochs,
                            beta0=self._warm[k])

    def _map(self, func, items):
        if self.n_jobs > 1 and len(items) > 1:
            with ThreadPoolExecutor(self.n_jobs) as pool:
                return list(pool.map(func, items))
        return [func(i) for i in items]

    def value(self, lam, tol):
        """Criterion value only (no hypergradient)."""
        lam = check_lam(self.penalty, lam)

        def one(k):
            run = run_pgd if self.algo is Algo.PGD else run_pcd
            sol = run(self.datafits[k], self.penalty, lam, self._cfg(k, tol))[0]
            return sol, self.criteria[k].value(sol.beta)

        out = self._map(one, list(range(len(self.datafits))))
        for k, (sol, _) in enumerate(out):
            self._warm[k] = sol.beta
        return (float(np.mean([v for _, v in out])),
                {"epochs": sum(s.epochs_run for s, _ in out),
                 "converged": all(s.converged for s, _ in out)})

    def value_grad(self, lam, tol):
        lam = check_lam(self.penalty, lam)

        def one(k):
            if self.engine != "implicit":
                return hypergrad.compute(self.engine, self.datafits[k],
                                         self.penalty, lam, self.criteria[k],
                                         self._cfg(k, tol))
            return self._implicit_identified(k, lam, tol)

        reports = self._map(one, list(range(len(self.datafits))))
        for k, rep in enumerate(reports):
            self._warm[k] = rep.beta
        value = float(np.mean([rep.value for rep in reports]))
        grad = np.mean([rep.hypergrad for rep in reports], axis=0)
        return value, grad, {
            "epochs": sum(rep.diagnostics["epochs"] for rep in reports),
            "converged": all(rep.diagnostics["inner_converged"]
                             for rep in reports)}

    def _implicit_identified(self, k, lam, tol):
        """Implicit hypergradient, re-solving tighter (warm) while the
        support-restricted map fails to contract, ie while the support has
        visibly not been identified yet."""
        for _ in range(TIGHTEN_MAX + 1):
            with warnings.catch_warnings():
                warnings.simplefilter(
                    "ignore", hypergrad.RestrictedInjectivityWarning)
                rep = hypergrad.implicit(
                    self.datafits[k], self.penalty, lam, self.criteria[k],
                    self._cfg(k, tol), linsys_tol=tol)
            contraction = rep.diagnostics["contraction"]
            if contraction is None or contraction < 1 or tol <= TIGHTEN_FLOOR:
                break
            self._warm[k] = rep.beta
            tol = max(tol / 100., TIGHTEN_FLOOR)
        return rep


class MulticlassObjective:
    """One-vs-all sparse logistic regressions with one log-strength per
    class, scored by multiclass cross-entropy on validation data."""

    def __init__(self, datafits, penalty, criterion, engine="implicit",
                 max_epochs=100_000, n_jobs=None):
        if len(datafits) < 2:
            raise ValueError("multiclass needs q >= 2 classes")
        if penalty.r != 1:
            raise ValueError("multiclass expects a one-parameter penalty")
        self.datafits = list(datafits)
        self.penalty = penalty
        self.criterion = criterion
        self.engine = engine
        self.max_epochs = max_epochs
        self.n_jobs = n_jobs or n_workers()
        self._warm = [None] * len(datafits)

    @classmethod
    def from_labels(cls, X_train, y_train, X_val, y_val, **kwargs):
        from .criteria import MulticlassCriterion
        y_train = np.asarray(y_train)
        q = int(max(y_train.max(), np.max(y_val)))
        dfs = [Datafit("logistic", X_train, np.where(y_train == k + 1, 1., -1.))
               for k in range(q)]
        return cls(dfs, Penalty("l1"), MulticlassCriterion(X_val, y_val),
                   **kwargs)

    @property
    def r(self):
        return len(self.datafits)

    def lambda_max(self):
        return np.array([lambda_max(df.kind, df.X, df.y)
                         for df in self.datafits])

    def default_lam0(self):
        return self.lambda_max() - np.log(100.)

    def _solve_all(self, lam, tol):
        def one(k):
            cfg = SolverConfig(tol=tol, max_epochs=self.max_epochs,
                               beta0=self._warm[k])
            return run_pcd(self.datafits[k], self.penalty, [lam[k]], cfg)[0]
        sols = [one(k) for k in range(self.r)] if self.n_jobs == 1 else \
            list(ThreadPoolExecutor(self.n_jobs).map(one, range(self.r)))
        for k, sol in enumerate(sols):
            if not sol.converged:
                raise hypergrad.NonConvergenceError(
                    f"inner solver failed for class {k}")
            self._warm[k] = sol.beta
        return sols

    def value(self, lam, tol):
        lam = np.asarray(lam, dtype=float)
        sols = self._solve_all(lam, tol)
        value = self.criterion.value([s.beta for s in sols])
        return value, {"epochs": sum(s.epochs_run for s in sols),
                       "converged": True}

    def value_grad(self, lam, tol):
        lam = np.asarray(lam, dtype=float)
        sols = self._solve_all(lam, tol)
        betas = [s.beta for s in sols]
        value = self.criterion.value(betas)
        grad = np.zeros(self.r)
        for k in range(self.r):
            crit_k = self.criterion.for_class(k, betas)
            cfg = SolverConfig(tol=tol, max_epochs=self.max_epochs,
                               beta0=betas[k])
            kw = {"linsys_tol": tol} if self.engine == "implicit" else {}
            rep = hypergrad.compute(self.engine, self.datafits[k],
                                    self.penalty, [lam[k]], crit_k, cfg, **kw)
            grad[k] = rep.hypergrad[0]
        return value, grad, {"epochs": sum(s.epochs_run for s in sols),
                             "converged": True}


def first_order(objective, cfg=None):
    """Gradient descent on ``lam`` with approximate hypergradients.

    The step is ``1 / ||grad||`` until the first increase of the criterion
    between consecutive iterations; from then on it is fixed and divided by
    10 at every further increase.  Stops after ``cfg.max_outer_iters``
    evaluations, when ``||grad|| < 1e-8`` or when the step underflows.
    """
    cfg = cfg or OuterConfig()
    lam = np.array(cfg.lam0 if cfg.lam0 is not None
                   else objective.default_lam0(), dtype=float)
    if hasattr(objective, "engine"):
        objective.engine = cfg.engine
    trace = BilevelTrace("first_order")
    adaptive = True
    alpha = None
    prev = None
    tightest = min(cfg.tol_schedule)
    for i in range(cfg.max_outer_iters):
        tol = cfg.tol_schedule[i]
        t0 = time.perf_counter()
        try:
            value, grad, info = objective.value_grad(lam, tol)
        except hypergrad.NonConvergenceError as e:
            raise BilevelAbort(str(e), trace) from e
        if not info["converged"] and tol <= tightest:
            raise BilevelAbort(
                f"inner solver did not converge at tol={tol}", trace)
        if not (np.isfinite(value) and np.all(np.isfinite(grad))):
            raise BilevelAbort(f"non-finite criterion or hypergradient at "
                               f"lam={lam}", trace)
        gnorm = float(np.linalg.norm(grad))
        if prev is not None and value > prev:
            adaptive = False
            alpha /= 10.
        if adaptive and gnorm > 0:
            alpha = 1. / gnorm
        step = alpha if alpha is not None else 0.
        trace.add(lam, value, gnorm, step, tol, info["epochs"],
                  1e3 * (time.perf_counter() - t0))
        if gnorm < GRAD_NORM_STOP or (not adaptive and step < STEP_UNDERFLOW):
            break
        lam = lam - step * grad
        prev = value
    return trace


def _evaluate(objective, lam, tol, trace):
    t0 = time.perf_counter()
    value, info = objective.value(lam, tol)
    trace.add(lam, value, tol=tol, epochs=info["epochs"],
              wall_ms=1e3 * (time.perf_counter() - t0))


def lambda_bounds(objective):
    """Default search box ``[lam_max - ln(1e4), lam_max]`` per axis."""
    lmax = objective.lambda_max()
    if lmax is None:
        lmax = np.log(10.)
    lmax = np.broadcast_to(np.asarray(lmax, dtype=float), (objective.r,))
    return [(float(m) - LOG_RANGE, float(m)) for m in lmax]


def grid_search(objective, grid_spec=None, tol=1e-6):
    """Evaluate the criterion on a product grid, in decreasing ``lam`` order
    so inner solves warm start along the regularization path.

    ``grid_spec`` is a list of ``(count, lo, hi)`` per axis; defaults to 100
    points for one hyperparameter and 10 per axis for two, over
    ``[lam_max - ln(1e4), lam_max]``.
    """
    if grid_spec is None:
        count = 100 if objective.r == 1 else 10
        grid_spec = [(count, lo, hi) for lo, hi in lambda_bounds(objective)]
    if len(grid_spec) != objective.r:
        raise ValueError(f"grid has {len(grid_spec)} axes, need {objective.r}")
    axes = [np.linspace(hi, lo, int(count)) for count, lo, hi in grid_spec]
    trace = BilevelTrace("grid")
    for point in np.array(np.meshgrid(*axes, indexing="ij")).reshape(
            objective.r, -1).T:
        _evaluate(objective, point, tol, trace)
    return trace


def random_search(objective, n_draws=30, bounds=None, seed=0, tol=1e-6):
    """Evaluate the criterion at ``n_draws`` points drawn uniformly in
    ``bounds`` (list of ``(lo, hi)`` per axis)."""
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    bounds = bounds or lambda_bounds(objective)
    rng = np.random.default_rng(seed)
    lo = np.array([b[0] for b in bounds], dtype=float)
    hi = np.array([b[1] for b in bounds], dtype=float)
    draws = lo + (hi - lo) * rng.random((n_draws, len(bounds)))
    trace = BilevelTrace("random")
    for point in draws:
        _evaluate(objective, point, tol, trace)
    return trace


def _objective(datafits, pen, criteria, **kwargs):
    if isinstance(datafits, Datafit):
        datafits, criteria = [datafits], [criteria]
    return CrossValObjective(datafits, criteria, pen, **kwargs)


def run_first_order(datafits, pen, criteria, cfg=None, **kwargs):
    """First-order descent on ``mean_k C_k(beta_k(lam))``.

    ``datafits``/``criteria`` are one object each (hold-out) or parallel
    lists (one per fold).
    """
    cfg = cfg or OuterConfig()
    obj = _objective(datafits, pen, criteria, engine=cfg.engine, **kwargs)
    return first_order(obj, cfg)


def run_grid_search(datafits, pen, criteria, grid_spec=None, tol=1e-6,
                    **kwargs):
    return grid_search(_objective(datafits, pen, criteria, **kwargs),
                       grid_spec, tol)


def run_random_search(datafits, pen, criteria, n_draws=30, bounds=None,
                      seed=0, tol=1e-6, **kwargs):
    return random_search(_objective(datafits, pen, criteria, **kwargs),
                         n_draws, bounds, seed, tol)


def run_multiclass_first_order(datafits, pen, criterion, cfg=None, **kwargs):
    """First-order search of one log-strength per class."""
    cfg = cfg or OuterConfig()
    obj = MulticlassObjective(datafits, pen, criterion, engine=cfg.engine,
                              **kwargs)
    return first_order(obj, cfg)
