"""
Correlation study, complexity benchmark and prediction dumps.
"""
from casa_forecaster.analysis.correlation import (
    correlation_matrix,
    correlation_report,
    gaussian_kde,
    matrix_metrics,
    ssim_matrix,
)
from casa_forecaster.analysis.predictions import prediction_dump
from casa_forecaster.analysis.scaling import ScalingReport, fit_slope, make_factory, scaling_benchmark

__all__ = ['ScalingReport', 'correlation_matrix', 'correlation_report', 'fit_slope', 'gaussian_kde',
           'make_factory', 'matrix_metrics', 'prediction_dump', 'scaling_benchmark', 'ssim_matrix']
