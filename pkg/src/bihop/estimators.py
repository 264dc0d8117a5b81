"""scikit-learn style estimators whose regularization strength is selected
by bilevel optimization on cross-validation folds.

No intercept is fitted; center ``y`` (regression) beforehand if needed.
"""
import warnings

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.exceptions import ConvergenceWarning
from sklearn.utils.multiclass import (check_classification_targets,
                                      type_of_target)
from sklearn.utils.validation import check_is_fitted, validate_data

from .bilevel import (MODELS, CrossValObjective, OuterConfig, first_order,
                      grid_search, lambda_bounds, random_search)
from .data_io import Dataset, Task, holdout_split, kfold_split
from .datafit import Datafit, _sigmoid
from .prox import Penalty
from .solvers import SolverConfig, solve_pcd

METHODS = ("first_order", "grid", "random")


class _BilevelLinearModel(BaseEstimator):
    _model = None
    _task = Task.REGRESSION

    def __init__(self, method="first_order", engine="implicit", cv=5,
                 max_outer_iters=30, n_draws=30, grid_size=None, tol=1e-6,
                 max_iter=10_000, random_state=0):
        self.method = method
        self.engine = engine
        self.cv = cv
        self.max_outer_iters = max_outer_iters
        self.n_draws = n_draws
        self.grid_size = grid_size
        self.tol = tol
        self.max_iter = max_iter
        self.random_state = random_state

    def _validate(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, "
                             f"got {self.method!r}")
        if isinstance(self.cv, float):
            if not 0 < self.cv < 1:
                raise ValueError("a float cv is the validation fraction in "
                                 "(0, 1)")
        elif int(self.cv) < 2:
            raise ValueError("cv must be >= 2 folds or a fraction in (0, 1)")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.input_tags.sparse = True
        return tags

    def _encode_y(self, y):
        return np.asarray(y, dtype=float)

    def _split(self, ds):
        seed = self.random_state or 0
        n = ds.X.n
        if isinstance(self.cv, float):
            if n < 2:
                raise ValueError(f"n_samples={n}: a hold-out split needs at "
                                 "least 2 samples")
            return holdout_split(ds, self.cv, seed)
        if n < int(self.cv):
            raise ValueError(f"n_samples={n} is smaller than cv={self.cv} "
                             "folds")
        return kfold_split(ds, int(self.cv), seed)

    def fit(self, X, y):
        self._validate()
        X, y = validate_data(self, X, y, accept_sparse=("csr", "csc"),
                             dtype=np.float64, y_numeric=self._task is
                             Task.REGRESSION)
        y = self._encode_y(y)
        ds = Dataset(X, y, self._task)
        obj = CrossValObjective.from_cv_spec(self._split(ds), self._model,
                                             max_epochs=self.max_iter)
        if self.method == "first_order":
            cfg = OuterConfig(max_outer_iters=self.max_outer_iters,
                              engine=self.engine, seed=self.random_state or 0)
            trace = first_order(obj, cfg)
        elif self.method == "grid":
            spec = None
            if self.grid_size is not None:
                spec = [(self.grid_size, lo, hi)
                        for lo, hi in lambda_bounds(obj)]
            trace = grid_search(obj, spec, tol=self.tol)
        else:
            trace = random_search(obj, self.n_draws, seed=self.random_state
                                  or 0, tol=self.tol)
        self.trace_ = trace
        self.log_alpha_, self.cv_score_ = trace.best
        self.alpha_ = np.exp(self.log_alpha_)

        df_kind, pen_kind, _ = MODELS[self._model]
        df = Datafit(df_kind, ds.X, ds.y)
        sol = solve_pcd(df, Penalty(pen_kind), self.log_alpha_,
                        SolverConfig(tol=min(self.tol, 1e-8),
                                     max_epochs=self.max_iter))
        if not sol.converged:
            warnings.warn(f"final fit stopped after max_iter={self.max_iter} "
                          f"epochs with residual {sol.stop_metric:.2e}",
                          ConvergenceWarning)
        self.n_iter_ = sol.epochs_run
        self.coef_ = self._primal(df, sol.beta)
        return self

    def _primal(self, df, beta):
        return beta

    def _decision(self, X):
        check_is_fitted(self, "coef_")
        X = validate_data(self, X, accept_sparse=("csr", "csc"),
                          dtype=np.float64, reset=False)
        return np.asarray(X @ self.coef_).ravel()


class BilevelLasso(RegressorMixin, _BilevelLinearModel):
    """Lasso ``||y - X w||^2 / 2n + e^lam ||w||_1`` with ``lam`` chosen by
    minimizing the cross-validated mean squared error.

    Parameters
    ----------
    method : {"first_order", "grid", "random"}
    engine : str
        Hypergradient engine for ``method="first_order"``.
    cv : int or float
        Number of folds, or the validation fraction for a single hold-out
        split.
    max_outer_iters, n_draws, grid_size : int
        Budgets of the three outer methods.
    tol : float
        Inner tolerance of grid and random search evaluations.
    max_iter : int
        Epoch cap of every inner solve.
    random_state : int

    Attributes
    ----------
    log_alpha_ : ndarray of shape (r,)
    alpha_ : ndarray of shape (r,)
    coef_ : ndarray of shape (n_features,)
    cv_score_ : float
    trace_ : BilevelTrace
    """
    _model = "lasso"

    def predict(self, X):
        return self._decision(X)


class BilevelElasticNet(BilevelLasso):
    """Elastic net ``||y - X w||^2 / 2n + e^lam1 ||w||_1 +
    e^lam2 ||w||^2 / 2`` with both log-strengths selected jointly."""
    _model = "enet"


class _BinaryMixin:
    _task = Task.BINARY

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.classifier_tags.multi_class = False
        return tags

    def _encode_y(self, y):
        check_classification_targets(y)
        y_type = type_of_target(y, input_name="y")
        if y_type != "binary":
            raise ValueError("Only binary classification is supported. The "
                             f"type of the target is {y_type}.")
        self.classes_ = np.unique(y)
        if self.classes_.size < 2:
            raise ValueError("Classifier can't train when only one class is "
                             f"present: got class {self.classes_[0]!r}.")
        return np.where(y == self.classes_[1], 1., -1.)

    def decision_function(self, X):
        return self._decision(X)

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[(scores > 0).astype(int)]


class BilevelSparseLogisticRegression(_BinaryMixin, ClassifierMixin,
                                      _BilevelLinearModel):
    """L1-penalized logistic regression, strength selected on the
    validation logistic loss."""
    _model = "sparse_logreg"

    def predict_proba(self, X):
        p1 = _sigmoid(self.decision_function(X))
        return np.column_stack([1 - p1, p1])


class BilevelLinearSVC(_BinaryMixin, ClassifierMixin, _BilevelLinearModel):
    """Hinge-loss SVM solved in the dual, ``C = e^lam`` selected on the
    validation smoothed hinge loss.  ``coef_`` is the primal vector."""
    _model = "svm"

    def _primal(self, df, beta):
        self.dual_coef_ = beta
        return df.M @ beta
