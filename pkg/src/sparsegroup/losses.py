"""Convex loss models the solver can fit.

A loss exposes value/gradient plus per-block Hessian access, and builds a
``QuadraticState`` anchored at the current iterate for the solver's quadratic
model: the state hands out block Hessians, maintains the running offset
``delta = x - base`` applied by the block sweep, returns the Hessian-offset
products ``[H delta]_J`` the block gradients need, and produces the cheap
upper bounds on those products that drive block screening.

``MultinomialLoss`` is the production loss (symmetric softmax parametrization,
optional unpenalized intercept block, dense or CSC design).
``QuadraticTestLoss`` exists so solver behavior can be pinned against closed
forms in tests.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod

import numpy as np
import scipy.sparse as sp
from numba import njit
from scipy.special import logsumexp, softmax

from .blocks import BlockStructure

__all__ = [
    "LossModel",
    "QuadraticState",
    "MultinomialLoss",
    "QuadraticTestLoss",
    "multinomial_probabilities",
]


class QuadraticState(ABC):
    """Quadratic model data anchored at one iterate of a loss.

    Carries the anchor point, its loss value and gradient ``q``, and tracks
    the offset ``delta`` accumulated by block updates so Hessian-offset
    products stay cheap.
    """

    base: np.ndarray
    base_value: float
    q: np.ndarray
    delta: np.ndarray

    @abstractmethod
    def hessian_block(self, J):
        """Block diagonal piece H_JJ (diagonal approximation if configured)."""

    @abstractmethod
    def hess_delta_block(self, J):
        """[H delta]_J for the current accumulated delta."""

    @abstractmethod
    def bound_coeff(self, J):
        """b_J with |[H delta]_J| <= b_J entrywise, cheaper than the product."""

    @abstractmethod
    def apply_block_change(self, J, change):
        """Record delta_J += change."""

    @abstractmethod
    def hess_delta_block_fresh(self, J):
        """[H delta]_J recomputed from scratch (consistency audits)."""


class LossModel(ABC):
    """Twice-differentiable convex loss over a block-structured parameter."""

    structure: BlockStructure
    intercept_block = None  # index of the unpenalized intercept block, if any

    @abstractmethod
    def value(self, beta):
        ...

    @abstractmethod
    def gradient(self, beta):
        ...

    @abstractmethod
    def hessian_block(self, beta, J):
        ...

    @abstractmethod
    def hessian_bound_coeff(self, delta, J):
        """b_J with |[H delta]_J| <= b_J entrywise, H taken at any iterate."""

    @abstractmethod
    def quadratic_state(self, beta, diagonal=False):
        ...

    def optimize_intercept(self):
        """Closed-form optimum of the unpenalized intercept block at zero
        coefficients, or None when the loss has no intercept."""
        return None

    def objective_evaluator(self, beta, delta):
        """Callable t -> value(beta + t*delta); losses override when a step
        along a fixed direction can be evaluated cheaper than from scratch."""
        beta = np.asarray(beta, dtype=float)
        delta = np.asarray(delta, dtype=float)

        def f(t):
            return self.value(beta + t * delta)

        return f


def _flat(structure, beta):
    return structure.check_flat(getattr(beta, "values", beta))


# ---------------------------------------------------------------------------
# multinomial logistic loss


# Hot per-block kernels, shared by the stateless API and the solver state.
# Every block of the multinomial loss is tied to one design column, handed
# around as (row indices, values); the intercept uses the all-ones column.


@njit(cache=True)
def _col_hessian(P, idx, vals):
    # diag(sum_i w_i P_i) - sum_i w_i P_i P_i' with w_i = vals_i**2
    K = P.shape[1]
    H = np.zeros((K, K))
    for t in range(idx.shape[0]):
        i = idx[t]
        w = vals[t] * vals[t]
        for k in range(K):
            a = w * P[i, k]
            H[k, k] += a
            for l in range(K):
                H[k, l] -= a * P[i, l]
    return H


@njit(cache=True)
def _col_hess_delta(P, D, idx, vals):
    # vals' (P*D - P * rowsum(P*D)) restricted to the column's rows
    K = P.shape[1]
    out = np.zeros(K)
    for t in range(idx.shape[0]):
        i = idx[t]
        v = vals[t]
        s = 0.0
        for k in range(K):
            s += P[i, k] * D[i, k]
        for k in range(K):
            out[k] += v * P[i, k] * (D[i, k] - s)
    return out


@njit(cache=True)
def _col_bound(rownorm, idx, vals):
    s = 0.0
    for t in range(idx.shape[0]):
        s += abs(vals[t]) * rownorm[idx[t]]
    return 0.5 * s


@njit(cache=True)
def _col_apply_change(D, rownorm, idx, vals, change):
    K = change.shape[0]
    for t in range(idx.shape[0]):
        i = idx[t]
        v = vals[t]
        s = 0.0
        for k in range(K):
            d = D[i, k] + v * change[k]
            D[i, k] = d
            s += d * d
        rownorm[i] = math.sqrt(s)


def multinomial_probabilities(X, intercept, coef):
    """Class probabilities under the softmax model.

    ``coef`` has shape (K, p) with one row per class, ``intercept`` shape
    (K,).  Accepts a dense or scipy sparse design.
    """
    eta = X @ coef.T
    if sp.issparse(eta):  # pragma: no cover - sparse @ dense yields ndarray
        eta = np.asarray(eta.todense())
    eta = np.asarray(eta) + np.asarray(intercept)[None, :]
    return softmax(eta, axis=1)


class MultinomialLoss(LossModel):
    """Negative multinomial log-likelihood, softmax parametrized.

    Parameters are one size-K block per feature, preceded by an unpenalized
    size-K intercept block when ``intercept=True``.  The parametrization is
    symmetric (no reference class); identifiability is left to the penalty.

    Parameters
    ----------
    X : ndarray or scipy.sparse matrix, shape (N, p)
        Design matrix.  Sparse input is converted to CSC once.
    y : ndarray of int, shape (N,)
        Class indices in 0..K-1.
    n_classes : int, optional
        Number of classes K; inferred as max(y)+1 when omitted.
    intercept : bool
        Whether to prepend the unpenalized intercept block.
    """

    def __init__(self, X, y, n_classes=None, intercept=True):
        if sp.issparse(X):
            self.X = X.tocsc()
            self.sparse = True
        else:
            self.X = np.asarray(X, dtype=float)
            if self.X.ndim != 2:
                raise ValueError("X must be 2-dimensional")
            self.sparse = False
        self.y = np.asarray(y)
        if self.y.ndim != 1 or self.y.shape[0] != self.X.shape[0]:
            raise ValueError(
                "y must hold one class index per row of X (got %r labels for %d rows)"
                % (self.y.shape, self.X.shape[0])
            )
        if self.y.size and self.y.min() < 0:
            raise ValueError("class indices must be nonnegative")
        K = int(n_classes) if n_classes is not None else int(self.y.max()) + 1
        if self.y.size and self.y.max() >= K:
            raise ValueError("class index %d outside 0..%d" % (int(self.y.max()), K - 1))
        self.n_classes = K
        self.n_samples, self.n_features = self.X.shape
        self.has_intercept = bool(intercept)
        dims = (K,) * (self.n_features + (1 if intercept else 0))
        self.structure = BlockStructure(dims)
        self.intercept_block = 0 if intercept else None
        self._onehot = np.zeros((self.n_samples, K))
        self._onehot[np.arange(self.n_samples), self.y] = 1.0
        # per-feature column access, uniform across dense and CSC: pairs of
        # (row indices, values); dense columns share one index vector
        self._dense_idx = np.arange(self.n_samples)
        self._ones = np.ones(self.n_samples)
        if self.sparse:
            Xc = self.X
            self._cols = [
                (
                    Xc.indices[Xc.indptr[j] : Xc.indptr[j + 1]].astype(np.intp),
                    Xc.data[Xc.indptr[j] : Xc.indptr[j + 1]].astype(float),
                )
                for j in range(self.n_features)
            ]
        else:
            self._cols = [
                (self._dense_idx, np.ascontiguousarray(self.X[:, j]))
                for j in range(self.n_features)
            ]

    # -- parameter layout helpers

    def split_flat(self, flat):
        """Flat parameters -> (intercept (K,) or None, coef (K, p))."""
        flat = _flat(self.structure, flat)
        K = self.n_classes
        if self.has_intercept:
            return flat[:K].copy(), flat[K:].reshape(self.n_features, K).T.copy()
        return None, flat.reshape(self.n_features, K).T.copy()

    def feature_block(self, j):
        return j + (1 if self.has_intercept else 0)

    def _eta(self, flat):
        K = self.n_classes
        if self.has_intercept:
            b0, rest = flat[:K], flat[K:]
        else:
            b0, rest = np.zeros(K), flat
        F = rest.reshape(self.n_features, K)
        eta = self.X @ F
        if sp.issparse(eta):  # pragma: no cover
            eta = np.asarray(eta.todense())
        return np.asarray(eta) + b0[None, :]

    # -- LossModel interface

    def value(self, beta):
        flat = _flat(self.structure, beta)
        eta = self._eta(flat)
        return self._value_from_eta(eta)

    def _value_from_eta(self, eta):
        lse = logsumexp(eta, axis=1)
        return float(np.sum(lse - eta[np.arange(self.n_samples), self.y]))

    def gradient(self, beta):
        flat = _flat(self.structure, beta)
        P = softmax(self._eta(flat), axis=1)
        R = P - self._onehot
        G = self.X.T @ R  # (p, K)
        G = np.asarray(G)
        if self.has_intercept:
            return np.concatenate([R.sum(axis=0), G.ravel()])
        return G.ravel()

    def block_column(self, J):
        """(row indices, values) of the design column behind block ``J``."""
        if self.has_intercept and J == 0:
            return self._dense_idx, self._ones
        return self._cols[J - (1 if self.has_intercept else 0)]

    def _hessian_block_from_probs(self, P, J):
        idx, vals = self.block_column(J)
        return _col_hessian(P, idx, vals)

    def hessian_block(self, beta, J):
        flat = _flat(self.structure, beta)
        if not 0 <= J < self.structure.m:
            raise IndexError("block index out of range")
        P = softmax(self._eta(flat), axis=1)
        return self._hessian_block_from_probs(P, J)

    def hessian_bound_coeff(self, delta, J):
        """0.5 * sum_i |x_iJ| * ||D_i||_2 with D_i the per-sample linear
        predictor offset; valid because the per-sample probability curvature
        has spectral norm at most 1/2."""
        flat = _flat(self.structure, delta)
        D = self._eta(flat)  # per-sample offset, intercept part included
        rownorm = np.linalg.norm(D, axis=1)
        idx, vals = self.block_column(J)
        return float(_col_bound(rownorm, idx, vals))

    def optimize_intercept(self):
        if not self.has_intercept:
            return None
        counts = np.bincount(self.y, minlength=self.n_classes).astype(float)
        if np.any(counts == 0):
            missing = np.flatnonzero(counts == 0)
            raise ValueError(
                "cannot fit an intercept with empty classes: %s"
                % ", ".join(str(int(c)) for c in missing)
            )
        return np.log(counts / self.n_samples)

    def quadratic_state(self, beta, diagonal=False):
        return _MultinomialState(self, _flat(self.structure, beta), diagonal)

    def objective_evaluator(self, beta, delta):
        flat = _flat(self.structure, beta)
        dflat = _flat(self.structure, delta)
        eta0 = self._eta(flat)
        eta_dir = self._eta(dflat)  # _eta is linear in the parameters

        def f(t):
            return self._value_from_eta(eta0 + t * eta_dir)

        return f


class _MultinomialState(QuadraticState):
    """Per-iterate state: probabilities at the anchor, running linear
    predictor offsets D_i (one K-vector per sample) with cached row norms."""

    def __init__(self, loss, base, diagonal):
        self.loss = loss
        self.diagonal = bool(diagonal)
        self.base = base.copy()
        eta = loss._eta(base)
        self.P = softmax(eta, axis=1)
        self.base_value = loss._value_from_eta(eta)
        R = self.P - loss._onehot
        G = np.asarray(loss.X.T @ R)
        if loss.has_intercept:
            self.q = np.concatenate([R.sum(axis=0), G.ravel()])
        else:
            self.q = G.ravel()
        self.delta = np.zeros(loss.structure.n)
        self.D = np.zeros((loss.n_samples, loss.n_classes))
        self.rownorm = np.zeros(loss.n_samples)
        self._hblocks = {}

    def hessian_block(self, J):
        H = self._hblocks.get(J)
        if H is None:
            H = self.loss._hessian_block_from_probs(self.P, J)
            if self.diagonal:
                H = np.diag(np.diag(H).copy())
            H.setflags(write=False)
            self._hblocks[J] = H
        return H

    def hess_delta_block(self, J):
        sl = self.loss.structure.slice(J)
        if self.diagonal:
            return np.diag(self.hessian_block(J)) * self.delta[sl]
        idx, vals = self.loss.block_column(J)
        return _col_hess_delta(self.P, self.D, idx, vals)

    def hess_delta_block_fresh(self, J):
        if self.diagonal:
            return self.hess_delta_block(J)
        D = self.loss._eta(self.delta)
        idx, vals = self.loss.block_column(J)
        return _col_hess_delta(self.P, D, idx, vals)

    def bound_coeff(self, J):
        if self.diagonal:
            sl = self.loss.structure.slice(J)
            return float(np.max(np.abs(np.diag(self.hessian_block(J)) * self.delta[sl]), initial=0.0))
        idx, vals = self.loss.block_column(J)
        return float(_col_bound(self.rownorm, idx, vals))

    def apply_block_change(self, J, change):
        sl = self.loss.structure.slice(J)
        self.delta[sl] += change
        if self.diagonal:
            return
        idx, vals = self.loss.block_column(J)
        _col_apply_change(self.D, self.rownorm, idx, vals, np.asarray(change, dtype=float))


# ---------------------------------------------------------------------------
# quadratic test loss


class QuadraticTestLoss(LossModel):
    """f(beta) = 0.5 * beta' A beta + b' beta with A symmetric PSD.

    A fixture loss: its quadratic model is exact, so one outer step of the
    solver must land on the penalized minimizer, and closed forms are
    available for several penalties.
    """

    def __init__(self, A, b, structure):
        A = np.asarray(A, dtype=float)
        b = np.asarray(b, dtype=float)
        if A.shape != (structure.n, structure.n):
            raise ValueError("A must be n x n for the given structure")
        if not np.allclose(A, A.T, atol=1e-10):
            raise ValueError("A must be symmetric")
        if b.shape != (structure.n,):
            raise ValueError("b must have length n")
        self.A = A
        self.b = b
        self.structure = structure

    def value(self, beta):
        x = _flat(self.structure, beta)
        return 0.5 * float(x @ self.A @ x) + float(self.b @ x)

    def gradient(self, beta):
        x = _flat(self.structure, beta)
        return self.A @ x + self.b

    def hessian_block(self, beta, J):
        sl = self.structure.slice(J)
        return self.A[sl, sl].copy()

    def hessian_bound_coeff(self, delta, J):
        d = _flat(self.structure, delta)
        sl = self.structure.slice(J)
        return float(np.max(np.abs(self.A[sl, :] @ d), initial=0.0))

    def quadratic_state(self, beta, diagonal=False):
        return _QuadraticState(self, _flat(self.structure, beta), diagonal)


class _QuadraticState(QuadraticState):
    def __init__(self, loss, base, diagonal):
        self.loss = loss
        self.diagonal = bool(diagonal)
        self.base = base.copy()
        self.base_value = loss.value(base)
        self.q = loss.gradient(base)
        self.delta = np.zeros(loss.structure.n)
        self._Adelta = np.zeros(loss.structure.n)

    def hessian_block(self, J):
        sl = self.loss.structure.slice(J)
        H = self.loss.A[sl, sl]
        if self.diagonal:
            return np.diag(np.diag(H).copy())
        return H

    def hess_delta_block(self, J):
        sl = self.loss.structure.slice(J)
        if self.diagonal:
            return np.diag(self.loss.A)[sl] * self.delta[sl]
        return self._Adelta[sl].copy()

    def hess_delta_block_fresh(self, J):
        sl = self.loss.structure.slice(J)
        if self.diagonal:
            return self.hess_delta_block(J)
        return self.loss.A[sl, :] @ self.delta

    def bound_coeff(self, J):
        return float(np.max(np.abs(self.hess_delta_block(J)), initial=0.0))

    def apply_block_change(self, J, change):
        sl = self.loss.structure.slice(J)
        self.delta[sl] += change
        if not self.diagonal:
            self._Adelta += self.loss.A[:, sl] @ change
