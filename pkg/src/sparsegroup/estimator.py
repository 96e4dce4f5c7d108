"""Scikit-learn estimator facade over the path solver.

``SparseGroupClassifier`` fits the whole penalty path once and predicts
from a chosen path entry; with ``cv`` set it also runs stratified
cross-validation (reusing the same full-data path) and points the default
entry at the selected penalty level.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y
from scipy.special import softmax

from .blocks import PenaltySpec
from .losses import MultinomialLoss
from .model_selection import cross_validate
from .preprocess import ColumnStandardizer
from .solver import SolverConfig, fit_path

__all__ = ["SparseGroupClassifier"]


class SparseGroupClassifier(ClassifierMixin, BaseEstimator):
    """Multinomial classifier with grouped plus elementwise sparsity.

    One block of coefficients per feature (one entry per class) is
    penalized by ``(1 - alpha)`` times its euclidean norm plus ``alpha``
    times the elementwise l1 norm, and the model is fitted along a
    decreasing grid of penalty levels with warm starts.

    Parameters
    ----------
    alpha : float
        Mixing weight in [0, 1]: 0 is pure group penalty, 1 pure l1.
    lambdas : array-like, optional
        Explicit penalty grid; the automatic grid runs from the smallest
        level fitting the null model down by ``lambda_min_ratio``.
    n_lambda, lambda_min_ratio : int, float
        Automatic grid shape; ignored when ``config`` is given.
    gamma : "sqrt_dim", scalar, or array
        Per-block weights on the group terms.
    xi : scalar or array
        Per-coefficient weights on the l1 terms.
    fit_intercept : bool
        Add an unpenalized per-class intercept block.
    standardize : bool
        Scale (and for dense input center) columns before fitting; fitted
        coefficients are reported on the original scale.  With ``cv`` the
        scaling is learned once from the full data.
    cv : int, optional
        When set, run stratified k-fold cross-validation and predict from
        the selected path entry instead of the last one.
    random_state : int
        Fold shuffling seed; unused without ``cv``.
    config : SolverConfig, optional
        Full solver configuration; overrides the grid parameters above.

    Attributes
    ----------
    classes_ : original class labels in sorted order
    coef_path_, intercept_path_ : arrays of shape (d, K, p) and (d, K)
    lambdas_ : the fitted penalty grid, decreasing
    best_index_ : path entry used by default when predicting
    cv_result_ : per-alpha cross-validation table (only with ``cv``)
    """

    def __init__(
        self,
        alpha=0.5,
        lambdas=None,
        n_lambda=100,
        lambda_min_ratio=1e-4,
        gamma="sqrt_dim",
        xi=1.0,
        fit_intercept=True,
        standardize=False,
        cv=None,
        random_state=0,
        config=None,
    ):
        self.alpha = alpha
        self.lambdas = lambdas
        self.n_lambda = n_lambda
        self.lambda_min_ratio = lambda_min_ratio
        self.gamma = gamma
        self.xi = xi
        self.fit_intercept = fit_intercept
        self.standardize = standardize
        self.cv = cv
        self.random_state = random_state
        self.config = config

    def _solver_config(self):
        if self.config is not None:
            return self.config
        return SolverConfig(
            n_lambda=self.n_lambda, lambda_min_ratio=self.lambda_min_ratio
        )

    def fit(self, X, y):
        X, y = check_X_y(X, y, accept_sparse="csc", dtype=np.float64)
        self.classes_, codes = np.unique(y, return_inverse=True)
        if self.classes_.size < 2:
            raise ValueError(
                "needs samples from at least 2 classes, got %d" % self.classes_.size
            )
        self.n_features_in_ = X.shape[1]
        config = self._solver_config()

        transformer = None
        if self.standardize:
            transformer = ColumnStandardizer()
            X = transformer.fit(X).transform(X)

        if self.cv is None:
            loss = MultinomialLoss(X, codes, intercept=self.fit_intercept)
            unpen = (0,) if self.fit_intercept else ()
            penalty = PenaltySpec.build(
                loss.structure,
                self.alpha,
                gamma=self.gamma,
                xi=self.xi,
                unpenalized_blocks=unpen,
            )
            path = fit_path(loss, penalty, config, lambdas=self.lambdas)
            best = path.n_lambda - 1
            self.cv_result_ = None
        else:
            entry = cross_validate(
                X,
                codes,
                [self.alpha],
                k=int(self.cv),
                seed=self.random_state,
                config=config,
                intercept=self.fit_intercept,
                gamma=self.gamma,
                xi=self.xi,
                lambdas=self.lambdas,
            ).for_alpha(float(self.alpha))
            path = entry.path
            best = entry.best_index
            self.cv_result_ = entry

        K, p = self.classes_.size, self.n_features_in_
        d = path.n_lambda
        coef_path = np.empty((d, K, p))
        intercept_path = np.zeros((d, K))
        for i in range(d):
            coef_path[i] = path.feature_flat(i).reshape(p, K).T
            b0 = path.intercept(i)
            if b0 is not None:
                intercept_path[i] = b0
        if transformer is not None:
            for i in range(d):
                intercept_path[i], coef_path[i] = (
                    transformer.inverse_transform_coefficients(
                        intercept_path[i], coef_path[i]
                    )
                )

        self.path_ = path
        self.lambdas_ = path.lambdas
        self.coef_path_ = coef_path
        self.intercept_path_ = intercept_path
        self.best_index_ = int(best)
        self.coef_ = coef_path[best]
        self.intercept_ = intercept_path[best]
        return self

    def decision_function(self, X, index=None):
        """Per-class linear scores at one path entry (default: best_index_)."""
        check_is_fitted(self)
        X = check_array(X, accept_sparse="csc", dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                "X has %d features, the fit used %d"
                % (X.shape[1], self.n_features_in_)
            )
        i = self.best_index_ if index is None else int(index)
        return np.asarray(X @ self.coef_path_[i].T) + self.intercept_path_[i]

    def predict(self, X, index=None):
        scores = self.decision_function(X, index=index)
        return self.classes_[np.argmax(scores, axis=1)]

    def predict_proba(self, X, index=None):
        return softmax(self.decision_function(X, index=index), axis=1)
