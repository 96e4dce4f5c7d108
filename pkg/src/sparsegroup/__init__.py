"""Sparse group penalized multinomial models.

The package fits generalized linear models under a mixed block/elementwise
penalty: a weighted sum of Euclidean norms over feature blocks plus a
weighted l1 term, with the mixing weight ``alpha`` sliding between pure
group (0) and pure lasso (1) behavior.

Most users want :class:`SparseGroupClassifier` or :func:`cross_validate`;
the lower level entry point is :func:`fit_path` over a
:class:`BlockStructure` / :class:`PenaltySpec` pair.
"""

from .blocks import BlockStructure, BlockVector, PenaltySpec
from .estimator import SparseGroupClassifier
from .losses import LossModel, MultinomialLoss, multinomial_probabilities
from .model_selection import (
    CvAlphaResult,
    CvResult,
    cross_validate,
    lambda_subsequence,
    predict_labels,
    stratified_folds,
)
from .penalty import lambda_max, min_norm_point, penalty_value, soft_threshold
from .preprocess import (
    ColumnStandardizer,
    RowNormalizer,
    normalize_rows,
    standardize_columns,
)
from .simulate import SimConfig, SimResult, preset, run_study
from .solver import (
    FitPath,
    SolveResult,
    SolverConfig,
    default_lambda_grid,
    fit_path,
    solve_single,
)

__all__ = [
    "BlockStructure",
    "BlockVector",
    "ColumnStandardizer",
    "CvAlphaResult",
    "CvResult",
    "FitPath",
    "LossModel",
    "MultinomialLoss",
    "PenaltySpec",
    "RowNormalizer",
    "SimConfig",
    "SimResult",
    "SolveResult",
    "SolverConfig",
    "SparseGroupClassifier",
    "cross_validate",
    "default_lambda_grid",
    "fit_path",
    "lambda_max",
    "lambda_subsequence",
    "min_norm_point",
    "multinomial_probabilities",
    "normalize_rows",
    "penalty_value",
    "predict_labels",
    "preset",
    "run_study",
    "soft_threshold",
    "solve_single",
    "standardize_columns",
    "stratified_folds",
]

__version__ = "0.1.0"
