"""Estimator facade: sklearn contract plus agreement with the direct API."""

import numpy as np
import pytest
from scipy import sparse
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from sparsegroup.blocks import PenaltySpec
from sparsegroup.estimator import SparseGroupClassifier
from sparsegroup.losses import MultinomialLoss
from sparsegroup.model_selection import cross_validate
from sparsegroup.solver import SolverConfig, fit_path


def _blobs(rng, n_per=12, n_classes=3, p=5, sep=3.0):
    X = rng.normal(0.0, 1.0, (n_per * n_classes, p))
    y = np.repeat(np.arange(n_classes), n_per)
    for cls in range(n_classes):
        X[y == cls, cls % p] += sep
    order = rng.permutation(y.size)
    return X[order], y[order]


def _fast():
    return dict(n_lambda=12, lambda_min_ratio=1e-2)


def test_fit_predict_beats_chance_and_shapes():
    rng = np.random.default_rng(0)
    X, y = _blobs(rng)
    est = SparseGroupClassifier(alpha=0.5, **_fast()).fit(X, y)
    assert est.coef_path_.shape == (12, 3, 5)
    assert est.intercept_path_.shape == (12, 3)
    assert est.lambdas_.shape == (12,)
    assert est.best_index_ == 11
    assert est.score(X, y) > 0.9
    # the grid opens at the null model
    assert np.all(est.coef_path_[0] == 0.0)


def test_string_labels_round_trip():
    rng = np.random.default_rng(1)
    X, y = _blobs(rng, n_classes=2)
    names = np.array(["neg", "pos"])[y]
    est = SparseGroupClassifier(alpha=1.0, **_fast()).fit(X, names)
    assert list(est.classes_) == ["neg", "pos"]
    assert set(est.predict(X)) <= {"neg", "pos"}
    acc = np.mean(est.predict(X) == names)
    assert acc > 0.9


def test_predict_proba_rows_sum_to_one():
    rng = np.random.default_rng(2)
    X, y = _blobs(rng)
    est = SparseGroupClassifier(alpha=0.0, **_fast()).fit(X, y)
    proba = est.predict_proba(X)
    assert proba.shape == (X.shape[0], 3)
    assert np.allclose(proba.sum(axis=1), 1.0)
    assert np.array_equal(
        est.classes_[np.argmax(proba, axis=1)], est.predict(X)
    )


def test_path_index_selects_entry():
    rng = np.random.default_rng(3)
    X, y = _blobs(rng)
    est = SparseGroupClassifier(alpha=0.5, **_fast()).fit(X, y)
    top = est.decision_function(X, index=0)
    # at lambda_max the scores are intercept-only, identical rows
    assert np.allclose(top, top[0])
    assert not np.allclose(est.decision_function(X), top)


def test_matches_direct_path_fit():
    rng = np.random.default_rng(4)
    X, y = _blobs(rng)
    est = SparseGroupClassifier(alpha=0.5, **_fast()).fit(X, y)

    loss = MultinomialLoss(X, y, intercept=True)
    penalty = PenaltySpec.build(
        loss.structure, 0.5, gamma="sqrt_dim", xi=1.0, unpenalized_blocks=(0,)
    )
    path = fit_path(loss, penalty, SolverConfig(**_fast()))
    assert np.array_equal(est.lambdas_, path.lambdas)
    i = path.n_lambda - 1
    b0, coef = loss.split_flat(path.betas[i])
    assert np.allclose(est.coef_, coef, atol=0)
    assert np.allclose(est.intercept_, b0, atol=0)


def test_cv_picks_same_entry_as_direct_call():
    rng = np.random.default_rng(5)
    X, y = _blobs(rng, n_per=10)
    est = SparseGroupClassifier(alpha=0.5, cv=3, random_state=7, **_fast()).fit(X, y)
    direct = cross_validate(
        X, y, [0.5], k=3, seed=7, config=SolverConfig(**_fast())
    ).for_alpha(0.5)
    assert est.best_index_ == direct.best_index
    assert est.cv_result_.lambda_hat == direct.lambda_hat
    assert np.array_equal(est.cv_result_.err, direct.err)
    assert est.score(X, y) > 0.5


def test_sparse_input_matches_dense():
    rng = np.random.default_rng(6)
    X, y = _blobs(rng)
    X[np.abs(X) < 0.3] = 0.0
    dense = SparseGroupClassifier(alpha=0.5, **_fast()).fit(X, y)
    sp = SparseGroupClassifier(alpha=0.5, **_fast()).fit(sparse.csc_array(X), y)
    assert np.allclose(dense.coef_, sp.coef_, atol=1e-10)
    assert np.array_equal(dense.predict(X), sp.predict(sparse.csc_array(X)))


def test_standardize_reports_raw_scale_coefficients():
    rng = np.random.default_rng(7)
    X, y = _blobs(rng)
    X[:, 0] *= 40.0
    est = SparseGroupClassifier(alpha=0.5, standardize=True, **_fast()).fit(X, y)

    from sparsegroup.preprocess import standardize_columns

    Xs, centers, scales = standardize_columns(X)
    ref = SparseGroupClassifier(alpha=0.5, **_fast()).fit(Xs, y)
    # same model expressed in the two coordinate systems
    assert np.allclose(est.decision_function(X), ref.decision_function(Xs))
    assert np.allclose(est.coef_, ref.coef_ / scales)


def test_no_intercept_path_is_zero():
    rng = np.random.default_rng(8)
    X, y = _blobs(rng)
    est = SparseGroupClassifier(alpha=0.5, fit_intercept=False, **_fast()).fit(X, y)
    assert np.all(est.intercept_path_ == 0.0)
    assert est.score(X, y) > 0.8


def test_sklearn_protocol():
    est = SparseGroupClassifier(alpha=0.25, n_lambda=9)
    params = est.get_params()
    assert params["alpha"] == 0.25 and params["n_lambda"] == 9
    twin = clone(est)
    assert twin.get_params() == params
    est.set_params(alpha=0.75)
    assert est.alpha == 0.75

    with pytest.raises(NotFittedError):
        SparseGroupClassifier().predict(np.zeros((2, 3)))


def test_fit_errors():
    rng = np.random.default_rng(9)
    X, y = _blobs(rng)
    with pytest.raises(ValueError, match="2 classes"):
        SparseGroupClassifier(**_fast()).fit(X, np.zeros(y.size, dtype=int))
    est = SparseGroupClassifier(**_fast()).fit(X, y)
    with pytest.raises(ValueError, match="features"):
        est.predict(X[:, :3])
