import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bihop.datafit import Datafit
from bihop.prox import Penalty, lambda_max, prox
from bihop.solvers import (Algo, SolverConfig, fixed_point_residual,
                           lasso_duality_gap, objective, solve, solve_pcd,
                           solve_pgd)

from conftest import lasso_problem, logreg_problem, svm_problem
from helpers import rate_fit

SOLVERS = [solve_pgd, solve_pcd]


@pytest.fixture
def one_d():
    return Datafit("quadratic", [[1.]], [2.])


@pytest.mark.parametrize("solver", SOLVERS)
def test_one_d_lasso_and_ridge(solver, one_d):
    cfg = SolverConfig(tol=1e-12, algo=Algo.PGD if solver is solve_pgd
                       else Algo.PCD)
    sol = solver(one_d, Penalty("l1"), [0.], cfg)
    np.testing.assert_allclose(sol.beta, [1.], atol=1e-12)
    assert sol.converged
    np.testing.assert_array_equal(sol.support, [0])
    sol = solver(one_d, Penalty("l2"), [0.], cfg)
    np.testing.assert_allclose(sol.beta, [1.], atol=1e-12)


@pytest.mark.parametrize("solver", SOLVERS)
def test_above_lambda_max_exact_zero(solver, one_d):
    sol = solver(one_d, Penalty("l1"), [np.log(2.) + 0.1])
    assert np.all(sol.beta == 0.)
    assert sol.support.size == 0


def test_svm_box_feasibility():
    df = Datafit("svm_dual", [[1., 0.], [-1., 0.5]], [1., -1.])
    sol = solve_pcd(df, Penalty("box"), [0.], SolverConfig(tol=1e-12))
    assert sol.converged
    assert np.all((sol.beta >= 0) & (sol.beta <= 1.))


def test_elastic_net_shrinks_with_l2_strength():
    df, _ = lasso_problem(0, n=20, p=10)
    norms = [np.linalg.norm(solve_pcd(df, Penalty("enet"), [-3., l2]).beta)
             for l2 in np.linspace(-3, 5, 9)]
    assert np.all(np.diff(norms) < 0)


def test_elastic_net_one_d_closed_form():
    df = Datafit("quadratic", [[1.]], [3.])
    beta = solve_pcd(df, Penalty("enet"), [0., np.log(2.)],
                     SolverConfig(tol=1e-13)).beta
    # ST(3, 1) / (1 + 2)
    np.testing.assert_allclose(beta, [2. / 3.], atol=1e-12)


def test_fixed_point_residual_examples(one_d):
    pen = Penalty("l1")
    assert fixed_point_residual(one_d, pen, [0.], [1.]) <= 1e-15
    assert fixed_point_residual(one_d, pen, [0.], [0.]) > 0
    df, crit = lasso_problem(3)
    beta = np.random.default_rng(0).standard_normal(df.n_features)
    L, _ = df.lipschitz()
    recomposed = np.max(np.abs(beta - prox(pen, beta - df.grad(beta) / L,
                                           1. / L, [-1.])))
    assert fixed_point_residual(df, pen, [-1.], beta) == recomposed


@pytest.mark.parametrize("problem, pen, lam", [
    (lasso_problem, "l1", None), (lasso_problem, "enet", None),
    (logreg_problem, "l1", None), (svm_problem, "box", [0.])])
def test_pgd_pcd_agree_and_descend(problem, pen, lam):
    df, _ = problem(1)
    pen = Penalty(pen)
    if lam is None:
        lam = np.full(pen.r, lambda_max(df.kind, df.X, df.y) - 2.)
    tol = 1e-11
    s1 = solve_pgd(df, pen, lam, SolverConfig(algo="pgd", tol=tol,
                                              max_epochs=200_000,
                                              record_iterates=True))
    s2 = solve_pcd(df, pen, lam, SolverConfig(tol=tol, record_iterates=True))
    assert s1.converged and s2.converged
    np.testing.assert_allclose(s1.beta, s2.beta, atol=1e-8)
    for sol in (s1, s2):
        obj = [objective(df, pen, lam, b) for _, b, _ in sol.iterates]
        assert np.all(np.diff(obj) <= 1e-12)


def test_max_epochs_exhausted_is_flagged_not_raised():
    df, _ = lasso_problem(2)
    sol = solve_pcd(df, Penalty("l1"), [-4.], SolverConfig(max_epochs=2,
                                                           tol=1e-14))
    assert not sol.converged
    assert sol.epochs_run == 2
    assert sol.stop_metric > 1e-14


def test_zero_epochs_returns_start():
    df, _ = lasso_problem(2)
    beta0 = np.ones(df.n_features)
    sol = solve(df, Penalty("l1"), [-1.], SolverConfig(max_epochs=0,
                                                       beta0=beta0))
    np.testing.assert_array_equal(sol.beta, beta0)
    assert sol.epochs_run == 0


def test_invalid_config():
    with pytest.raises(ValueError):
        SolverConfig(tol=0.)
    with pytest.raises(ValueError):
        SolverConfig(max_epochs=-1)
    df, _ = lasso_problem(2)
    with pytest.raises(ValueError):
        solve_pcd(df, Penalty("l1"), [0.], SolverConfig(beta0=np.ones(3)))


def test_zero_column_frozen():
    X = np.array([[1., 0.], [2., 0.], [0., 0.]])
    df = Datafit("quadratic", X, [1., 2., 3.])
    sol = solve_pcd(df, Penalty("l2"), [0.],
                    SolverConfig(beta0=np.array([0., 5.]), tol=1e-12))
    assert sol.converged
    assert sol.beta[1] == 5.


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_warm_start_does_not_change_fixed_point(seed):
    df, _ = lasso_problem(seed, n=20, p=30)
    pen = Penalty("l1")
    lam = [lambda_max(df.kind, df.X, df.y) - 1.5]
    cold = solve_pcd(df, pen, lam, SolverConfig(tol=1e-10))
    rng = np.random.default_rng(seed)
    warm = solve_pcd(df, pen, lam, SolverConfig(
        tol=1e-10, beta0=cold.beta + 0.1 * rng.standard_normal(30)))
    np.testing.assert_allclose(cold.beta, warm.beta, atol=1e-8)


@pytest.mark.parametrize("seed", range(3))
def test_finite_identification_and_linear_rate(seed):
    # small lambda keeps the post-identification phase long enough to fit
    df, _ = lasso_problem(seed, n=50, p=100)
    pen = Penalty("l1")
    lam = [lambda_max(df.kind, df.X, df.y) - np.log(100.)]
    ref = solve_pcd(df, pen, lam, SolverConfig(tol=1e-15, max_epochs=100_000))
    sol = solve_pcd(df, pen, lam, SolverConfig(tol=1e-14, max_epochs=100_000,
                                               record_iterates=True))
    K = sol.identified_at
    off = np.setdiff1d(np.arange(df.n_features), ref.support)
    for epoch, beta, _ in sol.iterates:
        if epoch >= K:
            np.testing.assert_array_equal(np.flatnonzero(beta), ref.support)
            assert np.all(beta[off] == ref.beta[off])
    epochs = [e for e, _, _ in sol.iterates]
    errs = [np.linalg.norm(b - ref.beta) for _, b, _ in sol.iterates]
    r2, slope, _ = rate_fit(epochs, errs, start=K, floor=1e-13)
    assert slope < 0
    assert r2 >= 0.99


def test_lasso_duality_gap_vanishes_at_solution():
    df, _ = lasso_problem(4)
    lam = [lambda_max(df.kind, df.X, df.y) - 1.]
    sol = solve_pcd(df, Penalty("l1"), lam, SolverConfig(tol=1e-13))
    assert 0 <= lasso_duality_gap(df, lam, sol.beta) < 1e-10
    assert lasso_duality_gap(df, lam, np.zeros(df.n_features)) > 1e-3
