import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bihop.criteria import (CvSpec, DualCriterion, HoldoutCriterion,
                            HoldoutSplit, MulticlassCriterion,
                            criterion_value_grad, cv_value_grad,
                            multiclass_ce_value_grad, smoothed_hinge)
from bihop.datafit import Datafit


def _split(rng, n=8, p=4, labels=False):
    def y(k):
        v = rng.standard_normal(k)
        return np.sign(v) + (v == 0) if labels else v
    return HoldoutSplit(rng.standard_normal((n, p)), y(n),
                        rng.standard_normal((n, p)), y(n))


def _fd_grad(fun, x, h=1e-6):
    out = np.zeros_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        out[j] = (fun(x + e) - fun(x - e)) / (2 * h)
    return out


def test_holdout_examples():
    split = HoldoutSplit(np.ones((1, 3)), [0.], np.zeros((2, 3)), [1., 1.])
    assert criterion_value_grad("mse", np.zeros(3), split)[0] == 1.
    split = HoldoutSplit(np.ones((1, 2)), [1.], np.zeros((3, 2)), [1., -1., 1.])
    v, _ = criterion_value_grad("logistic", np.zeros(2), split)
    assert v == pytest.approx(np.log(2.))


def test_smoothed_hinge_pieces():
    np.testing.assert_allclose(smoothed_hinge([-1., 0., 0.5, 1., 2.]),
                               [1.5, 0.5, 0.125, 0., 0.])
    crit = HoldoutCriterion("smoothed_hinge", [[1.]], [1.])
    v, g = crit.value_grad([2.])
    assert v == 0. and g[0] == 0.


def test_unknown_kind():
    with pytest.raises(ValueError):
        HoldoutCriterion("hinge", [[1.]], [1.])
    split = HoldoutSplit([[1.]], [0.], [[1.]], [1.])
    with pytest.raises(ValueError):
        criterion_value_grad("mae", [0.], split)


@pytest.mark.parametrize("kind", ["mse", "logistic", "smoothed_hinge"])
@pytest.mark.parametrize("seed", range(3))
def test_holdout_gradient_fd(kind, seed):
    rng = np.random.default_rng(seed)
    split = _split(rng, labels=kind != "mse")
    beta = rng.standard_normal(4)
    _, g = criterion_value_grad(kind, beta, split)
    fd = _fd_grad(lambda b: criterion_value_grad(kind, b, split)[0], beta)
    np.testing.assert_allclose(g, fd, atol=1e-6)


def test_dual_criterion_chain_rule():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((6, 3))
    y = np.array([1., -1., 1., 1., -1., -1.])
    df = Datafit("svm_dual", X, y)
    crit = DualCriterion(HoldoutCriterion("smoothed_hinge", X, y), df)
    beta = rng.uniform(0, 0.3, 6)
    np.testing.assert_allclose(crit.grad(beta),
                               _fd_grad(crit.value, beta), atol=1e-6)
    w = (y[:, None] * X).T @ beta
    assert crit.value(beta) == pytest.approx(
        HoldoutCriterion("smoothed_hinge", X, y).value(w))


def test_cv_examples():
    rng = np.random.default_rng(1)
    fold = _split(rng)
    beta = rng.standard_normal(4)
    single, _ = criterion_value_grad("mse", beta, fold)
    v, grads = cv_value_grad("mse", [beta, beta], CvSpec([fold, fold]))
    assert v == pytest.approx(single, rel=1e-14)
    assert len(grads) == 2
    folds = [_split(rng) for _ in range(5)]
    betas = [rng.standard_normal(4) for _ in range(5)]
    v, _ = cv_value_grad("mse", betas, CvSpec(folds))
    expected = np.mean([criterion_value_grad("mse", b, f)[0]
                        for b, f in zip(betas, folds)])
    assert v == pytest.approx(expected, abs=1e-12)
    v, _ = cv_value_grad("mse", [np.zeros(4)] * 5, CvSpec(folds))
    assert v == pytest.approx(np.mean([f.y_val @ f.y_val / f.y_val.size
                                       for f in folds]))


def test_cv_validation():
    rng = np.random.default_rng(2)
    with pytest.raises(ValueError):
        CvSpec([_split(rng)])
    spec = CvSpec([_split(rng), _split(rng)])
    with pytest.raises(ValueError):
        cv_value_grad("mse", [np.zeros(4)], spec)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), K=st.integers(2, 6))
def test_cv_fold_permutation_invariance(seed, K):
    rng = np.random.default_rng(seed)
    folds = [_split(rng) for _ in range(K)]
    betas = [rng.standard_normal(4) for _ in range(K)]
    perm = rng.permutation(K)
    v1, g1 = cv_value_grad("mse", betas, CvSpec(folds))
    v2, g2 = cv_value_grad("mse", [betas[i] for i in perm],
                           CvSpec([folds[i] for i in perm]))
    assert v1 == pytest.approx(v2, rel=1e-12)
    for a, i in zip(g2, perm):
        np.testing.assert_allclose(a, g1[i], rtol=1e-12)


def test_multiclass_uniform_softmax():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((7, 3))
    b = rng.standard_normal(3)
    v, _ = multiclass_ce_value_grad([b, b], X, rng.integers(1, 3, 7))
    assert v == pytest.approx(7 * np.log(2.))


def test_multiclass_gradient_fd():
    rng = np.random.default_rng(4)
    X = rng.standard_normal((9, 4))
    y = rng.integers(1, 4, 9)
    betas = [rng.standard_normal(4) for _ in range(3)]
    _, grads = multiclass_ce_value_grad(betas, X, y)
    for k in range(3):
        def f(b, k=k):
            bs = list(betas)
            bs[k] = b
            return multiclass_ce_value_grad(bs, X, y)[0]
        np.testing.assert_allclose(grads[k], _fd_grad(f, betas[k]), atol=1e-6)
    crit = MulticlassCriterion(X, y)
    sl = crit.for_class(1, betas)
    np.testing.assert_allclose(sl.grad(betas[1]), grads[1])


def test_multiclass_concentration_is_monotone():
    X = np.eye(3)
    y = np.array([1, 2, 3])
    values = [multiclass_ce_value_grad([s * np.eye(3)[k] for k in range(3)],
                                       X, y)[0] for s in (1., 10., 100.)]
    assert values[0] > values[1] > values[2] >= 0


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), shift=st.floats(-5, 5))
def test_multiclass_shift_invariance(seed, shift):
    rng = np.random.default_rng(seed)
    X = np.hstack([rng.standard_normal((6, 3)), np.ones((6, 1))])
    y = rng.integers(1, 4, 6)
    betas = [rng.standard_normal(4) for _ in range(3)]
    moved = [b + shift * np.eye(4)[3] for b in betas]
    v1, _ = multiclass_ce_value_grad(betas, X, y)
    v2, _ = multiclass_ce_value_grad(moved, X, y)
    assert v1 == pytest.approx(v2, rel=1e-10)


def test_multiclass_label_domain():
    with pytest.raises(ValueError):
        multiclass_ce_value_grad([np.zeros(2)] * 2, np.eye(2), [0, 1])
    with pytest.raises(ValueError):
        multiclass_ce_value_grad([np.zeros(2)], np.eye(2), [1, 1])
