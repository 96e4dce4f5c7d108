"""Stratified cross-validation over the regularization path.

The selection machinery has three parts: a per-class round-robin fold
assignment, pooled held-out misclassification along a shared lambda grid
for each mixing weight, and the block-count subsequence that compresses a
path to one lambda per distinct model size.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .blocks import PenaltySpec
from .losses import MultinomialLoss
from .penalty import lambda_max
from .solver import FitPath, SolverConfig, default_lambda_grid, fit_path


def parallel_map(fn, items, workers=1):
    """Map ``fn`` over ``items``, preserving order.

    With one worker this is an inline loop; otherwise a process pool, so
    ``fn`` and the items must be picklable.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def stratified_folds(labels, k, seed):
    """Assign each sample to one of ``k`` folds, stratified by label.

    Within every class the (seeded, shuffled) samples are dealt round-robin,
    with the starting fold carried over from class to class so total fold
    sizes stay balanced too.  Returns an integer fold index per sample.
    """
    y = np.asarray(labels)
    if y.ndim != 1 or y.size == 0:
        raise ValueError("labels must be a nonempty 1-d sequence")
    if k < 2:
        raise ValueError("need at least 2 folds, got %d" % k)
    if k > y.size:
        raise ValueError("more folds than samples: k=%d, N=%d" % (k, y.size))
    rng = np.random.default_rng(seed)
    assignment = np.empty(y.size, dtype=np.intp)
    phase = 0
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        rng.shuffle(idx)
        assignment[idx] = (phase + np.arange(idx.size)) % k
        phase += idx.size
    return assignment


def lambda_subsequence(path: FitPath):
    """Distinct nonzero-block counts with the smallest lambda attaining each.

    Returns pairs ``(theta_i, lambda_i)`` ordered by increasing ``theta_i``.
    """
    theta = np.asarray(path.theta)
    lams = np.asarray(path.lambdas, dtype=float)
    pairs = []
    for value in np.unique(theta):
        pairs.append((int(value), float(lams[theta == value].min())))
    return pairs


def _subsequence_indices(theta, lams):
    # one grid index per distinct theta: the position of the minimal lambda
    theta = np.asarray(theta)
    lams = np.asarray(lams)
    out = []
    for value in np.unique(theta):
        matches = np.flatnonzero(theta == value)
        out.append(matches[np.argmin(lams[matches])])
    return np.asarray(out, dtype=np.intp)


def predict_labels(X, intercept, coef):
    """Argmax-probability class labels; ties resolve to the lowest index."""
    eta = np.asarray(X @ coef.T)
    if intercept is not None:
        eta = eta + intercept
    return np.argmax(eta, axis=1)


@dataclass(frozen=True)
class CvAlphaResult:
    """Cross-validation summary for one mixing weight."""

    alpha: float
    lambdas: np.ndarray
    err: np.ndarray
    se: np.ndarray
    theta: np.ndarray
    pi: np.ndarray
    subsequence_idx: np.ndarray
    path: FitPath

    @property
    def subsequence(self):
        return [
            (int(self.theta[i]), float(self.lambdas[i])) for i in self.subsequence_idx
        ]

    @property
    def best_index(self):
        """Grid index of the smallest lambda attaining the minimal error."""
        best = np.flatnonzero(self.err == self.err.min())
        lams = self.lambdas[best]
        return int(best[np.argmin(lams)])

    @property
    def lambda_hat(self):
        return float(self.lambdas[self.best_index])


@dataclass(frozen=True)
class CvResult:
    alphas: tuple
    per_alpha: tuple
    folds: np.ndarray
    k: int
    seed: int

    def for_alpha(self, alpha):
        for entry in self.per_alpha:
            if entry.alpha == alpha:
                return entry
        raise KeyError("no cross-validation entry for alpha=%r" % (alpha,))


def _check_training_folds(y, folds, k, n_classes):
    for fold in range(k):
        train = y[folds != fold]
        present = np.zeros(n_classes, dtype=bool)
        present[train] = True
        missing = np.flatnonzero(~present)
        if missing.size:
            raise ValueError(
                "training part of fold %d has no samples of class %d"
                % (fold, missing[0])
            )


def _fit_fold(task):
    X, y, train_idx, n_classes, intercept, penalty, config, grid = task
    loss = MultinomialLoss(
        X[train_idx], y[train_idx], n_classes=n_classes, intercept=intercept
    )
    return fit_path(loss, penalty, config, lambdas=grid)


def cross_validate(
    X,
    y,
    alphas,
    k=10,
    seed=0,
    config=None,
    intercept=True,
    gamma="sqrt_dim",
    xi=1.0,
    lambdas=None,
    fold_config=None,
    workers=1,
):
    """Pooled K-fold misclassification error along per-alpha lambda grids.

    ``y`` holds integer class labels coded ``0..K-1``.  For every alpha the
    grid runs from that alpha's full-data lambda_max down by the factor in
    ``config``, unless an explicit shared ``lambdas`` grid is given; every
    fold is fitted on the same grid so errors pool exactly.  Block counts
    come from the full-data path, not fold averages.  ``fold_config``, when
    given, replaces ``config`` for the fold fits only; the error curve uses
    argmax predictions, which tolerate looser fold tolerances than the
    reported full-data path does.
    """
    if config is None:
        config = SolverConfig()
    if fold_config is None:
        fold_config = config
    y = np.asarray(y)
    alphas = [float(a) for a in alphas]
    if not alphas:
        raise ValueError("need at least one alpha value")
    folds = stratified_folds(y, k, seed)
    full_loss = MultinomialLoss(X, y, intercept=intercept)
    n_classes = full_loss.n_classes
    _check_training_folds(y, folds, k, n_classes)

    beta0 = np.zeros(full_loss.structure.n)
    if intercept:
        beta0[full_loss.structure.slice(0)] = full_loss.optimize_intercept()
    grad0 = full_loss.gradient(beta0)

    unpen = (0,) if intercept else ()
    fold_ids = np.arange(k)
    test_sets = [np.flatnonzero(folds == fold) for fold in fold_ids]
    train_sets = [np.flatnonzero(folds != fold) for fold in fold_ids]

    if lambdas is not None:
        lambdas = np.sort(np.asarray(lambdas, dtype=float))[::-1].copy()
        if lambdas.ndim != 1 or lambdas.size == 0 or np.any(lambdas < 0.0):
            raise ValueError("lambda grid must be nonempty with nonnegative values")

    per_alpha = []
    for alpha in alphas:
        penalty = PenaltySpec.build(
            full_loss.structure, alpha, gamma=gamma, xi=xi, unpenalized_blocks=unpen
        )
        if lambdas is None:
            lam_top = lambda_max(penalty, grad0)
            grid = default_lambda_grid(
                lam_top, config.n_lambda, config.lambda_min_ratio
            )
        else:
            grid = lambdas
        full_path = fit_path(full_loss, penalty, config, lambdas=grid)

        tasks = [
            (X, y, train_sets[fold], n_classes, intercept, penalty, fold_config, grid)
            for fold in fold_ids
        ]
        fold_paths = parallel_map(_fit_fold, tasks, workers)

        wrong = np.zeros(grid.size)
        for fold, path in zip(fold_ids, fold_paths):
            test_idx = test_sets[fold]
            X_test, y_test = X[test_idx], y[test_idx]
            for i in range(grid.size):
                b0, coef = full_loss.split_flat(path.betas[i])
                pred = predict_labels(X_test, b0, coef)
                wrong[i] += np.count_nonzero(pred != y_test)
        err = wrong / y.size
        se = np.sqrt(err * (1.0 - err) / y.size)
        per_alpha.append(
            CvAlphaResult(
                alpha=alpha,
                lambdas=grid,
                err=err,
                se=se,
                theta=full_path.theta.copy(),
                pi=full_path.pi.copy(),
                subsequence_idx=_subsequence_indices(full_path.theta, grid),
                path=full_path,
            )
        )
    return CvResult(
        alphas=tuple(alphas),
        per_alpha=tuple(per_alpha),
        folds=folds,
        k=int(k),
        seed=int(seed),
    )
