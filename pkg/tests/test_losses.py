import math

import numpy as np
import pytest
import scipy.sparse as sp

from sparsegroup.blocks import BlockStructure
from sparsegroup.losses import (
    MultinomialLoss,
    QuadraticTestLoss,
    multinomial_probabilities,
)

from reference import (
    finite_diff_gradient,
    finite_diff_hessian_block,
    multinomial_value_naive,
)


def _random_problem(rng, N=12, p=3, K=3, intercept=True, sparse=False):
    X = rng.standard_normal((N, p))
    if sparse:
        X[rng.random((N, p)) < 0.4] = 0.0
        X = sp.csc_matrix(X)
    y = rng.integers(0, K, N)
    # make sure every class appears
    y[:K] = np.arange(K)
    return MultinomialLoss(X, y, n_classes=K, intercept=intercept)


def test_value_at_zero_balanced():
    X = np.ones((4, 1))
    y = np.array([0, 1, 0, 1])
    loss = MultinomialLoss(X, y, intercept=True)
    assert loss.value(np.zeros(loss.structure.n)) == pytest.approx(4 * math.log(2))


def test_value_matches_naive_formula():
    rng = np.random.default_rng(31)
    loss = _random_problem(rng, N=9, p=4, K=3)
    flat = rng.standard_normal(loss.structure.n) * 0.7
    b0, coef = loss.split_flat(flat)
    assert loss.value(flat) == pytest.approx(
        multinomial_value_naive(loss.X, loss.y, b0, coef), rel=1e-12
    )


def test_value_handles_extreme_predictors():
    # max-shifted log-sum-exp must survive large linear predictors
    X = np.array([[100.0], [-100.0]])
    y = np.array([0, 1])
    loss = MultinomialLoss(X, y, n_classes=2, intercept=False)
    flat = np.array([10.0, -10.0])
    v = loss.value(flat)
    assert np.isfinite(v)
    assert v == pytest.approx(0.0, abs=1e-12)  # perfectly separated


def test_gradient_single_sample_example():
    loss = MultinomialLoss(np.array([[1.0]]), np.array([0]), n_classes=2, intercept=False)
    g = loss.gradient(np.zeros(2))
    assert np.allclose(g, [-0.5, 0.5])


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(32)
    for sparse in (False, True):
        loss = _random_problem(rng, N=10, p=3, K=3, sparse=sparse)
        for _ in range(3):
            flat = rng.standard_normal(loss.structure.n) * 0.5
            g = loss.gradient(flat)
            fd = finite_diff_gradient(loss.value, flat, h=1e-6)
            denom = max(1.0, float(np.max(np.abs(fd))))
            assert np.max(np.abs(g - fd)) / denom < 1e-5


def test_hessian_single_sample_example():
    loss = MultinomialLoss(np.array([[1.0]]), np.array([0]), n_classes=2, intercept=False)
    H = loss.hessian_block(np.zeros(2), 0)
    assert np.allclose(H, [[0.25, -0.25], [-0.25, 0.25]])


def test_hessian_blocks_match_finite_differences():
    rng = np.random.default_rng(33)
    loss = _random_problem(rng, N=10, p=3, K=3)
    for _ in range(3):
        flat = rng.standard_normal(loss.structure.n) * 0.5
        for J in range(loss.structure.m):
            H = loss.hessian_block(flat, J)
            fd = finite_diff_hessian_block(loss.gradient, flat, loss.structure.slice(J), h=1e-5)
            denom = max(1.0, float(np.max(np.abs(fd))))
            assert np.max(np.abs(H - fd)) / denom < 1e-4


def test_hessian_blocks_are_psd():
    rng = np.random.default_rng(34)
    loss = _random_problem(rng, N=15, p=4, K=4)
    flat = rng.standard_normal(loss.structure.n)
    for J in range(loss.structure.m):
        w = np.linalg.eigvalsh(loss.hessian_block(flat, J))
        assert w.min() >= -1e-10


def test_probabilities_sum_to_one():
    rng = np.random.default_rng(35)
    loss = _random_problem(rng, N=20, p=4, K=5)
    flat = rng.standard_normal(loss.structure.n) * 3.0
    b0, coef = loss.split_flat(flat)
    P = multinomial_probabilities(loss.X, b0, coef)
    assert np.max(np.abs(P.sum(axis=1) - 1.0)) < 1e-12
    assert np.all(P >= 0)


def test_sparse_and_dense_paths_identical():
    rng = np.random.default_rng(36)
    N, p, K = 14, 5, 3
    Xd = rng.standard_normal((N, p))
    Xd[rng.random((N, p)) < 0.5] = 0.0
    y = rng.integers(0, K, N)
    y[:K] = np.arange(K)
    dense = MultinomialLoss(Xd, y, n_classes=K)
    sparse = MultinomialLoss(sp.csc_matrix(Xd), y, n_classes=K)
    flat = rng.standard_normal(dense.structure.n) * 0.8
    assert sparse.value(flat) == pytest.approx(dense.value(flat), rel=1e-12, abs=1e-12)
    assert np.max(np.abs(sparse.gradient(flat) - dense.gradient(flat))) < 1e-12
    for J in range(dense.structure.m):
        hd = dense.hessian_block(flat, J)
        hs = sparse.hessian_block(flat, J)
        assert np.max(np.abs(hd - hs)) < 1e-12


def test_value_convex_along_segments():
    rng = np.random.default_rng(37)
    loss = _random_problem(rng, N=12, p=3, K=3)
    for _ in range(10):
        a = rng.standard_normal(loss.structure.n)
        b = rng.standard_normal(loss.structure.n)
        t = float(rng.uniform(0, 1))
        lhs = loss.value(t * a + (1 - t) * b)
        assert lhs <= t * loss.value(a) + (1 - t) * loss.value(b) + 1e-9


def test_optimize_intercept_log_proportions():
    y = np.array([0, 0, 0, 1])
    loss = MultinomialLoss(np.zeros((4, 1)), y, n_classes=2)
    b0 = loss.optimize_intercept()
    assert np.allclose(b0, [math.log(0.75), math.log(0.25)])
    # gradient of the intercept block vanishes there
    flat = np.zeros(loss.structure.n)
    flat[:2] = b0
    g = loss.gradient(flat)
    assert np.max(np.abs(g[:2])) < 1e-12


def test_optimize_intercept_empty_class_error():
    y = np.array([0, 0, 2, 2])
    loss = MultinomialLoss(np.zeros((4, 1)), y, n_classes=3)
    with pytest.raises(ValueError, match="1"):
        loss.optimize_intercept()


def test_hessian_bound_dominates_true_product():
    rng = np.random.default_rng(38)
    for sparse in (False, True):
        loss = _random_problem(rng, N=10, p=4, K=3, sparse=sparse)
        base = rng.standard_normal(loss.structure.n) * 0.5
        state = loss.quadratic_state(base)
        delta = rng.standard_normal(loss.structure.n)
        for J in range(loss.structure.m):
            sl = loss.structure.slice(J)
            state.apply_block_change(J, delta[sl])
        for J in range(loss.structure.m):
            hd = state.hess_delta_block(J)
            b = state.bound_coeff(J)
            assert np.max(np.abs(hd)) <= b + 1e-12
            # and the stateless op agrees
            assert loss.hessian_bound_coeff(delta, J) == pytest.approx(b, rel=1e-12)


def test_bound_zero_at_zero_delta():
    rng = np.random.default_rng(39)
    loss = _random_problem(rng, N=8, p=3, K=3)
    state = loss.quadratic_state(np.zeros(loss.structure.n))
    for J in range(loss.structure.m):
        assert state.bound_coeff(J) == 0.0
        assert loss.hessian_bound_coeff(np.zeros(loss.structure.n), J) == 0.0


def test_state_incremental_matches_fresh():
    rng = np.random.default_rng(40)
    for sparse in (False, True):
        loss = _random_problem(rng, N=11, p=4, K=3, sparse=sparse)
        base = rng.standard_normal(loss.structure.n) * 0.4
        state = loss.quadratic_state(base)
        for _ in range(12):
            J = int(rng.integers(0, loss.structure.m))
            change = rng.standard_normal(loss.structure.dims[J]) * 0.3
            state.apply_block_change(J, change)
        for J in range(loss.structure.m):
            inc = state.hess_delta_block(J)
            fresh = state.hess_delta_block_fresh(J)
            assert np.max(np.abs(inc - fresh)) < 1e-10


def test_state_product_matches_directional_finite_difference():
    rng = np.random.default_rng(41)
    loss = _random_problem(rng, N=9, p=3, K=3)
    base = rng.standard_normal(loss.structure.n) * 0.3
    delta = rng.standard_normal(loss.structure.n) * 0.5
    state = loss.quadratic_state(base)
    for J in range(loss.structure.m):
        state.apply_block_change(J, delta[loss.structure.slice(J)])
    h = 1e-6
    fd = (loss.gradient(base + h * delta) - loss.gradient(base - h * delta)) / (2 * h)
    for J in range(loss.structure.m):
        sl = loss.structure.slice(J)
        got = state.hess_delta_block(J)
        denom = max(1.0, float(np.max(np.abs(fd[sl]))))
        assert np.max(np.abs(got - fd[sl])) / denom < 1e-5


def test_state_gradient_and_value_at_anchor():
    rng = np.random.default_rng(42)
    loss = _random_problem(rng, N=9, p=3, K=3)
    base = rng.standard_normal(loss.structure.n) * 0.3
    state = loss.quadratic_state(base)
    assert state.base_value == pytest.approx(loss.value(base), rel=1e-12)
    assert np.max(np.abs(state.q - loss.gradient(base))) < 1e-12


def test_diagonal_state_uses_diagonal():
    rng = np.random.default_rng(43)
    loss = _random_problem(rng, N=9, p=3, K=3)
    base = rng.standard_normal(loss.structure.n) * 0.3
    full = loss.quadratic_state(base, diagonal=False)
    diag = loss.quadratic_state(base, diagonal=True)
    for J in range(loss.structure.m):
        Hf = full.hessian_block(J)
        Hd = diag.hessian_block(J)
        assert np.allclose(np.diag(Hd), np.diag(Hf))
        assert np.allclose(Hd - np.diag(np.diag(Hd)), 0.0)


def test_objective_evaluator_matches_value():
    rng = np.random.default_rng(44)
    loss = _random_problem(rng, N=9, p=3, K=3)
    beta = rng.standard_normal(loss.structure.n) * 0.4
    delta = rng.standard_normal(loss.structure.n)
    f = loss.objective_evaluator(beta, delta)
    for t in (0.0, 0.25, 1.0):
        assert f(t) == pytest.approx(loss.value(beta + t * delta), rel=1e-12)


def test_label_validation():
    with pytest.raises(ValueError):
        MultinomialLoss(np.zeros((3, 2)), np.array([0, 1]))
    with pytest.raises(ValueError):
        MultinomialLoss(np.zeros((3, 2)), np.array([0, 1, 3]), n_classes=3)
    with pytest.raises(ValueError):
        MultinomialLoss(np.zeros((3, 2)), np.array([0, -1, 1]))


# ---------------------------------------------------------------------------
# quadratic test loss


def test_quadratic_loss_value_and_gradient():
    s = BlockStructure((2, 1))
    A = np.eye(3)
    b = np.array([1.0, -2.0, 0.5])
    loss = QuadraticTestLoss(A, b, s)
    x = np.array([1.0, 1.0, 2.0])
    assert loss.value(x) == pytest.approx(0.5 * 6.0 + (1.0 - 2.0 + 1.0))
    assert np.allclose(loss.gradient(x), x + b)
    assert np.allclose(loss.hessian_block(x, 0), np.eye(2))


def test_quadratic_loss_validation():
    s = BlockStructure((2,))
    with pytest.raises(ValueError):
        QuadraticTestLoss(np.eye(3), np.zeros(2), s)
    with pytest.raises(ValueError):
        QuadraticTestLoss(np.array([[1.0, 2.0], [0.0, 1.0]]), np.zeros(2), s)
    with pytest.raises(ValueError):
        QuadraticTestLoss(np.eye(2), np.zeros(3), s)


def test_quadratic_state_incremental_products():
    rng = np.random.default_rng(45)
    s = BlockStructure((2, 3, 1))
    M = rng.standard_normal((6, 6))
    A = M @ M.T
    loss = QuadraticTestLoss(A, rng.standard_normal(6), s)
    state = loss.quadratic_state(rng.standard_normal(6))
    for _ in range(8):
        J = int(rng.integers(0, 3))
        state.apply_block_change(J, rng.standard_normal(s.dims[J]))
    for J in range(3):
        sl = s.slice(J)
        expect = (A @ state.delta)[sl]
        assert np.max(np.abs(state.hess_delta_block(J) - expect)) < 1e-10
        assert np.max(np.abs(state.hess_delta_block_fresh(J) - expect)) < 1e-10
        assert state.bound_coeff(J) == pytest.approx(
            float(np.max(np.abs(expect), initial=0.0)), abs=1e-12
        )
