"""
Cross-variate correlation study: Pearson matrices, Gaussian KDE of the
correlation values, and similarity metrics against the ground truth.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from casa_forecaster.exceptions import EmptySamples, InvalidArgument, ShapeMismatch, ZeroNorm

GRID_POINTS = 512
GRID_LOW, GRID_HIGH = -1.2, 1.2
# Correlations live in [-1, 1]
CORRELATION_RANGE = 2.0


@dataclass
class CorrelationReport:
    """Matrices, KDE densities and metric rows, keyed by source name ('truth' first)."""
    matrices: dict = field(default_factory=dict)
    grid: np.ndarray = None
    densities: dict = field(default_factory=dict)
    metrics: list = field(default_factory=list)
    degenerate: dict = field(default_factory=dict)


def degenerate_variates(series):
    """Indices of variates with zero standard deviation."""
    series = np.asarray(series, dtype=np.float64)
    return [int(i) for i in np.flatnonzero(series.std(axis=0) == 0)]


def correlation_matrix(series, logger=None):
    """
    Pearson correlation between the columns of a [T', N] series.

    Constant variates get 0 off the diagonal and 1 on it; they are logged
    as degenerate, not rejected.

    Args:
        series: Array [T', N] with T' >= 2
        logger: Logger instance for logging

    Returns:
        Symmetric [N, N] array with unit diagonal
    """
    series = np.asarray(series, dtype=np.float64)
    if series.ndim != 2 or series.shape[0] < 2:
        raise ShapeMismatch(f"correlation needs a [T', N] series with T' >= 2, got {series.shape}")
    centered = series - series.mean(axis=0)
    cov = centered.T @ centered / series.shape[0]
    std = np.sqrt(np.diag(cov))
    degenerate = std == 0
    if degenerate.any() and logger:
        logger.warning(f"DegenerateSeries: variates {np.flatnonzero(degenerate).tolist()} are constant")
    safe = np.where(degenerate, 1.0, std)
    corr = cov / np.outer(safe, safe)
    corr[degenerate, :] = 0.0
    corr[:, degenerate] = 0.0
    corr = 0.5 * (corr + corr.T)
    np.fill_diagonal(corr, 1.0)
    return corr


def off_diagonal(matrix):
    """Strict upper-triangle entries of a square matrix."""
    matrix = np.asarray(matrix)
    rows, cols = np.triu_indices(matrix.shape[0], k=1)
    return matrix[rows, cols]


def scott_bandwidth(samples):
    """Scott's rule h = n^(-1/5) * std; a zero spread falls back to unit std."""
    samples = np.asarray(samples, dtype=np.float64).ravel()
    if samples.size == 0:
        raise EmptySamples("bandwidth of an empty sample set")
    sigma = samples.std(ddof=1) if samples.size > 1 else 0.0
    if not sigma > 0:
        sigma = 1.0
    return float(samples.size ** (-0.2) * sigma)


def kde_grid(points=GRID_POINTS, low=GRID_LOW, high=GRID_HIGH):
    return np.linspace(low, high, points)


def gaussian_kde(samples, bandwidth, grid):
    """
    Gaussian kernel density estimate evaluated on a grid.

    Args:
        samples: 1-D reals, at least one
        bandwidth: Kernel width h > 0
        grid: Evaluation points

    Returns:
        Array of densities, f(x) = sum(phi((x - s_i) / h)) / (n h)
    """
    samples = np.asarray(samples, dtype=np.float64).ravel()
    if samples.size == 0:
        raise EmptySamples("KDE needs at least one sample")
    if not bandwidth > 0:
        raise InvalidArgument(f"bandwidth must be positive, got {bandwidth}")
    grid = np.asarray(grid, dtype=np.float64)
    kernel = norm.pdf((grid[:, None] - samples[None, :]) / bandwidth)
    return kernel.sum(axis=1) / (samples.size * bandwidth)


def pdf_mse(density_a, density_b):
    return float(np.mean((np.asarray(density_a) - np.asarray(density_b)) ** 2))


def matrix_metrics(a, b):
    """
    Element-mean squared difference and cosine similarity of two matrices.

    Returns:
        Tuple (mse, cosine)
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"matrix shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    na, nb = np.linalg.norm(a.ravel()), np.linalg.norm(b.ravel())
    if na == 0 or nb == 0:
        raise ZeroNorm("cosine similarity of a zero matrix")
    return mse, float(np.dot(a.ravel(), b.ravel()) / (na * nb))


def ssim_matrix(a, b, dynamic_range=CORRELATION_RANGE):
    """
    Global (single-window) SSIM between two matrices.

    Args:
        a: Array
        b: Array of the same shape
        dynamic_range: R in C1 = (0.01 R)^2, C2 = (0.03 R)^2

    Returns:
        SSIM in [-1, 1]
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"matrix shapes differ: {a.shape} vs {b.shape}")
    c1 = (0.01 * dynamic_range) ** 2
    c2 = (0.03 * dynamic_range) ** 2
    mu_a, mu_b = a.mean(), b.mean()
    da, db = a - mu_a, b - mu_b
    var_a, var_b = np.mean(da * da), np.mean(db * db)
    cov = np.mean(da * db)
    numerator = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    denominator = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(numerator / denominator)


def pool_windows(windows):
    """Concatenate [B, N, H] window forecasts into a [B*H, N] series."""
    windows = np.asarray(windows, dtype=np.float64)
    return windows.transpose(0, 2, 1).reshape(-1, windows.shape[1])


def correlation_report(truth, predictions, bandwidth=None, grid=None, logger=None):
    """
    Compare each model's cross-variate correlation structure with the truth.

    Args:
        truth: Ground-truth series [T', N]
        predictions: Dictionary {source name: predicted series [T', N]}
        bandwidth: KDE bandwidth; Scott's rule per source when None
        grid: KDE evaluation grid; 512 points over [-1.2, 1.2] when None
        logger: Logger instance for logging

    Returns:
        CorrelationReport with one metric row per source, truth included
    """
    logger = logger or logging.getLogger("CASA-Forecaster")
    grid = kde_grid() if grid is None else np.asarray(grid, dtype=np.float64)
    report = CorrelationReport(grid=grid)

    sources = {'truth': truth}
    sources.update(predictions)
    for name, series in sources.items():
        matrix = correlation_matrix(series, logger)
        samples = off_diagonal(matrix)
        if samples.size == 0:
            # A single variate has no pairs; its only correlation is the diagonal
            samples = np.ones(1)
        h = bandwidth or scott_bandwidth(samples)
        report.matrices[name] = matrix
        report.densities[name] = gaussian_kde(samples, h, grid)
        report.degenerate[name] = degenerate_variates(series)

    reference = report.matrices['truth']
    for name, matrix in report.matrices.items():
        mse, cosine = matrix_metrics(matrix, reference)
        report.metrics.append({
            'source': name,
            'mse': mse,
            'cosine': cosine,
            'ssim': ssim_matrix(matrix, reference),
            'pdf_mse': pdf_mse(report.densities[name], report.densities['truth']),
        })
        logger.info(f"correlation {name}: MSE {mse:.4f}, cosine {cosine:.4f}")
    return report
