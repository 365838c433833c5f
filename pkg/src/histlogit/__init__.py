"""Logistic regression on histogram-aggregated covariates."""

from .aggregation import (BinGrid, Histogram, MixedAggregate, QuantileHistogram,
                          aggregate_fixed, aggregate_mixed, aggregate_quantile,
                          marginal_histograms, marginalize)
from .composite import (ProjectionStats, estimate_projection_stats, loglik_composite,
                        transform_coefficients)
from .dataset import DataError, Dataset, read_csv
from .estimation import FitConfig, FitResult, cross_validate, fit, mmse
from .likelihood import (LikelihoodSpec, gradient, loglik_classical, loglik_mixture,
                         loglik_symbolic)
from .model import Coefficients, class_probability, predict, prediction_accuracy
from .quadrature import Rectangle, integrate_bin
from .separation import SeparationReport, detect_separation
from .simulation import SimDesign, generate_synthetic, run_experiment, two_step_subsample

__version__ = "0.1.0"

__all__ = [
    "BinGrid", "Histogram", "MixedAggregate", "QuantileHistogram", "aggregate_fixed",
    "aggregate_mixed", "aggregate_quantile", "marginal_histograms", "marginalize",
    "ProjectionStats", "estimate_projection_stats", "loglik_composite",
    "transform_coefficients", "DataError", "Dataset", "read_csv", "FitConfig",
    "FitResult", "cross_validate", "fit", "mmse", "LikelihoodSpec", "gradient",
    "loglik_classical", "loglik_mixture", "loglik_symbolic", "Coefficients",
    "class_probability", "predict", "prediction_accuracy", "Rectangle", "integrate_bin",
    "SeparationReport", "detect_separation", "SimDesign", "generate_synthetic",
    "run_experiment", "two_step_subsample",
]
