"""Quantile estimation of nonlinear regression models with multiple change-points."""

from .core import (
    Dataset,
    KnightTerms,
    QuantileLevel,
    RegressionModel,
    check_loss,
    get_model,
    knight_terms,
    linear,
    mono_molecular,
    total_loss,
)
from .estimator import (
    EstimationError,
    FitConfig,
    SegmentFit,
    SparsityEstimate,
    asymptotic_cov,
    estimate_f0,
    fit_ls,
    fit_quantile,
)

__version__ = "0.1.0"
