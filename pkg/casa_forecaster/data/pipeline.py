"""
Benchmark CSV ingestion, chronological splits, standardization and sliding windows.
"""
import logging
import math
import os
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np
import pandas as pd

from casa_forecaster.exceptions import (
    ConfigError,
    DataError,
    InsufficientData,
    MissingValue,
    ParseError,
)
from casa_forecaster.utils.parsers import check_monotonic, infer_steps_per_hour

# 12/4/4 months of 30 days, in hours
ETT_MONTH_HOURS = 30 * 24
ETT_MONTHS = (12, 4, 4)

_MISSING_MARKERS = ('', 'nan', 'na', 'n/a', 'null', 'none')


@dataclass
class SeriesTable:
    """Raw multivariate series: T timestamps and a [T, N] value matrix."""
    timestamps: List[str]
    values: np.ndarray
    variate_names: List[str]
    monotonic: bool = True

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise DataError(f"values must be [T, N], got shape {values.shape}")
        if len(self.timestamps) != values.shape[0]:
            raise DataError(f"{len(self.timestamps)} timestamps for {values.shape[0]} rows")
        if len(self.variate_names) != values.shape[1]:
            raise DataError(f"{len(self.variate_names)} names for {values.shape[1]} variates")
        values.flags.writeable = False
        self.values = values

    @property
    def n_steps(self):
        return self.values.shape[0]

    @property
    def n_vars(self):
        return self.values.shape[1]

    def with_values(self, values):
        return SeriesTable(list(self.timestamps), values, list(self.variate_names), self.monotonic)


@dataclass
class SplitSpec:
    """
    How to cut a table into train/val/test.

    mode 'ratio' uses the train/val/test fractions, 'ett' the 12/4/4-month
    calendar convention of the ETT benchmarks.
    """
    mode: str = 'ratio'
    train: float = 0.7
    val: float = 0.1
    test: float = 0.2

    def validate(self):
        if self.mode not in ('ratio', 'ett'):
            raise ConfigError(f"data.split must be 'ratio' or 'ett', got {self.mode!r}")
        if self.mode == 'ratio':
            ratios = (self.train, self.val, self.test)
            if any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
                raise ConfigError(f"split ratios must be positive and sum to 1, got {ratios}")
        return self


@dataclass
class SplitRanges:
    """Half-open [start, stop) index ranges; val/test include the L-step lookback."""
    train: Tuple[int, int]
    val: Tuple[int, int]
    test: Tuple[int, int]
    boundaries: Tuple[int, int, int] = (0, 0, 0)

    def as_dict(self):
        return {'train': self.train, 'val': self.val, 'test': self.test}


@dataclass
class Scaler:
    """Per-variate z-score statistics fitted on the train range."""
    mean: np.ndarray
    std: np.ndarray
    min_std: float = 1e-8

    def _divisor(self):
        # Near-constant variates are only shifted
        return np.where(self.std < self.min_std, 1.0, self.std)

    def transform(self, values):
        return (np.asarray(values, dtype=np.float64) - self.mean) / self._divisor()

    def inverse(self, values):
        return np.asarray(values, dtype=np.float64) * self._divisor() + self.mean


@dataclass
class WindowBatch:
    inputs: np.ndarray  # [B, N, L]
    targets: np.ndarray  # [B, N, H]
    starts: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self):
        return self.inputs.shape[0]


def _is_missing(cell):
    return cell.strip().lower() in _MISSING_MARKERS


def load_csv(path, date_column=None, delimiter=',', logger=None):
    """
    Load a benchmark CSV (timestamp column + numeric variate columns).

    Args:
        path: Path to the CSV file (UTF-8, header row)
        date_column: Name of the timestamp column; the first column when None
        delimiter: Field separator
        logger: Logger instance for logging

    Returns:
        SeriesTable with values parsed as 64-bit floats
    """
    logger = logger or logging.getLogger("CASA-Forecaster")
    if not os.path.isfile(path):
        raise DataError(f"Dataset not found: {path}")

    try:
        frame = pd.read_csv(path, sep=delimiter, dtype=str, keep_default_na=False,
                            encoding='utf-8', skipinitialspace=True)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise ParseError(f"Could not read {path}: {e}")

    if frame.shape[1] < 2:
        raise ParseError(f"{path}: expected a timestamp column and at least one variate", row=1)
    if date_column is None:
        date_column = frame.columns[0]
    if date_column not in frame.columns:
        raise ParseError(f"{path}: date column {date_column!r} not in header", row=1, column=date_column)

    value_columns = [column for column in frame.columns if column != date_column]
    values = np.empty((len(frame), len(value_columns)), dtype=np.float64)
    for j, column in enumerate(value_columns):
        cells = frame[column]
        missing = cells.map(_is_missing).to_numpy()
        if missing.any():
            row = int(np.argmax(missing))
            # Header is line 1 of the file
            raise MissingValue(f"{path}: missing value at line {row + 2}, column {column!r}",
                               row=row + 2, column=column)
        parsed = pd.to_numeric(cells.str.strip(), errors='coerce').to_numpy(dtype=np.float64)
        bad = ~np.isfinite(parsed)
        if bad.any():
            row = int(np.argmax(bad))
            raise ParseError(f"{path}: cannot parse {cells.iloc[row]!r} at line {row + 2}, column {column!r}",
                             row=row + 2, column=column)
        values[:, j] = parsed

    timestamps = [str(stamp).strip() for stamp in frame[date_column]]
    monotonic = check_monotonic(timestamps, logger)
    logger.info(f"Loaded {path}: T={values.shape[0]}, N={values.shape[1]}")
    return SeriesTable(timestamps, values, [str(c) for c in value_columns], monotonic)


def resolve_split(table, spec, L, H=1):
    """
    Resolve a SplitSpec into index ranges.

    Ratio mode puts floor(train*T) steps in train and floor(test*T) in test,
    val takes the rest. Val and test start L steps early so their first
    window has full history.

    Args:
        table: SeriesTable
        spec: SplitSpec
        L: Input length
        H: Horizon; every range must hold at least one window of L + H steps

    Returns:
        SplitRanges
    """
    spec.validate()
    T = table.n_steps
    if T < L + H:
        raise InsufficientData(f"series has {T} steps, needs at least L + H = {L + H}")

    if spec.mode == 'ratio':
        train_end = int(math.floor(spec.train * T + 1e-9))
        test_len = int(math.floor(spec.test * T + 1e-9))
        val_end = T - test_len
    else:
        scale = infer_steps_per_hour(table.timestamps)
        months = [m * ETT_MONTH_HOURS * scale for m in ETT_MONTHS]
        train_end = months[0]
        val_end = months[0] + months[1]
        total = sum(months)
        if T < total:
            raise InsufficientData(f"ETT calendar split needs {total} steps, series has {T}")
        T = total

    ranges = SplitRanges(
        train=(0, train_end),
        val=(max(train_end - L, 0), val_end),
        test=(max(val_end - L, 0), T),
        boundaries=(train_end, val_end, T),
    )
    for name, (start, stop) in ranges.as_dict().items():
        if stop - start < L + H:
            raise InsufficientData(
                f"{name} range [{start}, {stop}) is shorter than L + H = {L + H}")
    return ranges


def fit_apply_scaler(table, train_range):
    """
    Fit per-variate mean/std on the train range and standardize the whole table.

    Args:
        table: SeriesTable
        train_range: (start, stop) of the train split

    Returns:
        Tuple (Scaler, standardized SeriesTable)
    """
    start, stop = train_range
    if stop <= start:
        raise InsufficientData(f"empty train range {train_range}")
    train = table.values[start:stop]
    scaler = Scaler(mean=train.mean(axis=0), std=train.std(axis=0))
    return scaler, table.with_values(scaler.transform(table.values))


def unscale(scaler, values):
    """Map standardized values (last axis = variates) back to the original scale."""
    return scaler.inverse(values)


def window_starts(index_range, L, H, stride=1):
    """Start index of every window whose input and target lie inside the range."""
    start, stop = index_range
    if stride <= 0:
        raise ConfigError(f"stride must be positive, got {stride}")
    if stop - start < L + H:
        raise InsufficientData(f"range [{start}, {stop}) is shorter than L + H = {L + H}")
    return np.arange(start, stop - L - H + 1, stride, dtype=np.int64)


def slice_windows(values, starts, L, H):
    """
    Cut [B, N, L] inputs and [B, N, H] targets out of a [T, N] matrix.

    Args:
        values: Array [T, N]
        starts: Window start indices
        L: Input length
        H: Horizon

    Returns:
        WindowBatch
    """
    starts = np.asarray(starts, dtype=np.int64)
    inputs = np.stack([values[s:s + L].T for s in starts]) if len(starts) else np.zeros((0, values.shape[1], L))
    targets = np.stack([values[s + L:s + L + H].T for s in starts]) if len(starts) else np.zeros((0, values.shape[1], H))
    return WindowBatch(inputs=inputs, targets=targets, starts=starts)


def make_windows(table, index_range, L, H, stride=1, batch_size=32, rng=None):
    """
    Stream (input, target) batches from one split.

    Args:
        table: SeriesTable (usually standardized)
        index_range: (start, stop) of the split
        L: Input length
        H: Horizon
        stride: Offset between consecutive window starts
        batch_size: Maximum windows per batch
        rng: Shuffles the window order when given; chronological otherwise

    Returns:
        Iterator of WindowBatch
    """
    if batch_size <= 0:
        raise ConfigError(f"batch size must be positive, got {batch_size}")
    starts = window_starts(index_range, L, H, stride)
    if rng is not None:
        starts = starts[rng.permutation(len(starts))]
    values = table.values if isinstance(table, SeriesTable) else np.asarray(table)

    def batches():
        for offset in range(0, len(starts), batch_size):
            yield slice_windows(values, starts[offset:offset + batch_size], L, H)

    return batches()


def count_windows(index_range, L, H, stride=1):
    return len(window_starts(index_range, L, H, stride))


def synthetic_table(n_steps, n_vars, seed=0, kind='sine', step_minutes=60):
    """
    Generated table for smoke tests and benchmarks.

    Args:
        n_steps: T
        n_vars: N
        seed: Seed for phases and noise
        kind: 'sine' for phase-shifted sinusoids with small noise,
            'noise' for unit-variance Gaussian noise
        step_minutes: Spacing of the generated timestamps

    Returns:
        SeriesTable
    """
    rng = np.random.default_rng(seed)
    if kind == 'noise':
        values = rng.standard_normal((n_steps, n_vars))
    elif kind == 'sine':
        t = np.arange(n_steps)[:, None]
        periods = 12.0 + 4.0 * np.arange(n_vars)[None, :]
        phases = rng.uniform(0, 2 * np.pi, size=(1, n_vars))
        values = np.sin(2 * np.pi * t / periods + phases) + 0.05 * rng.standard_normal((n_steps, n_vars))
    else:
        raise ConfigError(f"unknown synthetic kind {kind!r}")
    stamps = pd.date_range('2016-07-01', periods=n_steps, freq=pd.Timedelta(minutes=step_minutes)).strftime('%Y-%m-%d %H:%M:%S')
    return SeriesTable(list(stamps), values, [f"v{j}" for j in range(n_vars)])
