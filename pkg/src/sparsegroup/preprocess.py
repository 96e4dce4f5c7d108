"""Sample normalization and feature standardization.

Two affine cleanups commonly applied before a penalized fit: per-row
centering/scaling of the samples, and per-column scaling (optionally
centering) of the features.  The two do not commute; apply row normalization
first when both are wanted.  Plain functions do the work; thin transformer
wrappers give the usual fit/transform API.

Sample variances use the N-1 denominator throughout.  Constant rows or
columns are hard errors naming the offending indices: silently dropping or
passing them through hides upstream data bugs.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, TransformerMixin

__all__ = [
    "normalize_rows",
    "standardize_columns",
    "RowNormalizer",
    "ColumnStandardizer",
]


def _format_indices(idx):
    return ", ".join(str(int(i)) for i in idx)


def normalize_rows(X):
    """Center and scale every row to mean 0, variance 1.

    Dense input only: row centering fills in every entry, so a sparse matrix
    must be densified explicitly by the caller first.  Raises on rows with
    zero variance.
    """
    if sp.issparse(X):
        raise TypeError(
            "row normalization centers every row and would densify a sparse "
            "matrix; convert to a dense array first"
        )
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be 2-dimensional")
    if X.shape[1] < 2:
        raise ValueError("rows need at least 2 entries for a sample variance")
    means = X.mean(axis=1, keepdims=True)
    var = X.var(axis=1, ddof=1, keepdims=True)
    flat = np.flatnonzero(var.ravel() == 0.0)
    if flat.size:
        raise ValueError("constant rows cannot be normalized: %s" % _format_indices(flat))
    return (X - means) / np.sqrt(var)


def standardize_columns(X, center=None):
    """Scale columns to variance 1, optionally centering them first.

    ``center`` defaults to True for dense input and False for sparse input
    (centering would fill the matrix in); passing ``center=True`` with a
    sparse matrix densifies it.  Returns ``(X2, centers, scales)`` where
    ``centers`` is what was actually subtracted (zeros when not centering),
    so ``X2 * scales + centers`` recovers the input and fitted coefficients
    can be mapped back to the original feature scale.
    """
    sparse_in = sp.issparse(X)
    if center is None:
        center = not sparse_in
    center = bool(center)
    if sparse_in and not center:
        X = X.tocsc()
        n = X.shape[0]
        if n < 2:
            raise ValueError("columns need at least 2 entries for a sample variance")
        mean = np.asarray(X.mean(axis=0)).ravel()
        meansq = np.asarray(X.multiply(X).mean(axis=0)).ravel()
        var = (meansq - mean * mean) * (n / (n - 1.0))
        flat = np.flatnonzero(var <= 0.0)
        if flat.size:
            raise ValueError(
                "constant columns cannot be standardized: %s" % _format_indices(flat)
            )
        scales = np.sqrt(var)
        X2 = X.multiply(1.0 / scales).tocsc()
        return X2, np.zeros(X.shape[1]), scales
    if sparse_in:
        X = np.asarray(X.todense())
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be 2-dimensional")
    if X.shape[0] < 2:
        raise ValueError("columns need at least 2 entries for a sample variance")
    var = X.var(axis=0, ddof=1)
    flat = np.flatnonzero(var == 0.0)
    if flat.size:
        raise ValueError(
            "constant columns cannot be standardized: %s" % _format_indices(flat)
        )
    scales = np.sqrt(var)
    centers = X.mean(axis=0) if center else np.zeros(X.shape[1])
    return (X - centers) / scales, centers, scales


class RowNormalizer(TransformerMixin, BaseEstimator):
    """Stateless transformer view of :func:`normalize_rows`.

    Each row is normalized from its own statistics, so ``fit`` learns
    nothing and transforming new data needs no stored state.
    """

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        return normalize_rows(X)


class ColumnStandardizer(TransformerMixin, BaseEstimator):
    """Column scaling (and optional centering) with stored affine state.

    After ``fit``, ``centers_`` and ``scales_`` hold the affine map, and
    ``inverse_transform_coefficients`` rewrites a model fit on transformed
    features in terms of the original ones.
    """

    def __init__(self, center=None):
        self.center = center

    def fit(self, X, y=None):
        _, self.centers_, self.scales_ = standardize_columns(X, center=self.center)
        return self

    def transform(self, X):
        if sp.issparse(X):
            if np.any(self.centers_ != 0.0):
                X = np.asarray(X.todense())
            else:
                return X.tocsc().multiply(1.0 / self.scales_).tocsc()
        X = np.asarray(X, dtype=float)
        return (X - self.centers_) / self.scales_

    def inverse_transform(self, X):
        if sp.issparse(X):
            X = np.asarray(X.todense())
        return np.asarray(X, dtype=float) * self.scales_ + self.centers_

    def inverse_transform_coefficients(self, intercept, coef):
        """Map (intercept, coef) fitted on transformed features back to the
        original scale, preserving the linear predictor.

        ``coef`` has one column per feature (any leading shape), ``intercept``
        broadcasts against ``coef @ centers``.
        """
        coef = np.asarray(coef, dtype=float)
        raw_coef = coef / self.scales_
        raw_intercept = np.asarray(intercept, dtype=float) - raw_coef @ self.centers_
        return raw_intercept, raw_coef
