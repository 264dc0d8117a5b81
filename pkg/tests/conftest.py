import warnings

import numpy as np
import pytest
import scipy.sparse as sp

from bihop.criteria import HoldoutCriterion
from bihop.datafit import Datafit


def random_design(rng, n, p, density=1.):
    X = rng.standard_normal((n, p))
    if density < 1:
        X = X * (rng.random((n, p)) < density)
    return sp.csc_matrix(X)


def lasso_problem(seed, n=30, p=60, n_val=20, density=1.):
    """Random quadratic datafit plus hold-out MSE, with lambda_max."""
    rng = np.random.default_rng(seed)
    X = random_design(rng, n, p, density)
    beta = np.zeros(p)
    beta[: max(1, p // 10)] = rng.standard_normal(max(1, p // 10))
    y = X @ beta + 0.1 * rng.standard_normal(n)
    Xv = random_design(rng, n_val, p, density)
    yv = Xv @ beta + 0.1 * rng.standard_normal(n_val)
    return Datafit("quadratic", X, y), HoldoutCriterion("mse", Xv, yv)


def logreg_problem(seed, n=40, p=30, n_val=30):
    rng = np.random.default_rng(seed)
    X = random_design(rng, n, p)
    w = rng.standard_normal(p)
    y = np.where(X @ w + 0.5 * rng.standard_normal(n) > 0, 1., -1.)
    Xv = random_design(rng, n_val, p)
    yv = np.where(Xv @ w > 0, 1., -1.)
    return Datafit("logistic", X, y), HoldoutCriterion("logistic", Xv, yv)


def svm_problem(seed, n=30, p=10, n_val=30):
    from bihop.criteria import DualCriterion
    rng = np.random.default_rng(seed)
    X = random_design(rng, n, p)
    w = rng.standard_normal(p)
    y = np.where(X @ w + 0.5 * rng.standard_normal(n) > 0, 1., -1.)
    Xv = random_design(rng, n_val, p)
    yv = np.where(Xv @ w > 0, 1., -1.)
    df = Datafit("svm_dual", X, y)
    return df, DualCriterion(HoldoutCriterion("smoothed_hinge", Xv, yv), df)


@pytest.fixture
def lasso_1d():
    """X=[[1]], y=[2]; validation X=[1], y=0 so that C(beta) = beta^2."""
    df = Datafit("quadratic", np.array([[1.]]), np.array([2.]))
    crit = HoldoutCriterion("mse", np.array([[1.]]), np.array([0.]))
    return df, crit


@pytest.fixture(autouse=True)
def _quiet_injectivity():
    from bihop.hypergrad import RestrictedInjectivityWarning
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RestrictedInjectivityWarning)
        yield
