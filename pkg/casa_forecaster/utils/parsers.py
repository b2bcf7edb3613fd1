"""
Parsing utilities for config values, value lists and dataset timestamps.
"""
import re

import numpy as np
import pandas as pd

from casa_forecaster.exceptions import ConfigError

_INT_PATTERN = re.compile(r'^[+-]?\d+$')
_FLOAT_PATTERN = re.compile(r'^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$')


def parse_value(text):
    """
    Coerce a raw config string into a Python scalar.

    Args:
        text: Raw value as written in a config file or after --set

    Returns:
        bool, int, float, None or the stripped string
    """
    value = re.sub(r'\s+', ' ', str(text)).strip()
    lowered = value.lower()
    if lowered in ('true', 'yes', 'on'):
        return True
    if lowered in ('false', 'no', 'off'):
        return False
    if lowered in ('none', 'null', ''):
        return None
    if _INT_PATTERN.match(value):
        return int(value)
    if _FLOAT_PATTERN.match(value):
        return float(value)
    # Strip optional quotes
    if len(value) >= 2 and value[0] == value[-1] and value[0] in ('"', "'"):
        return value[1:-1]
    return value


def parse_int_list(text):
    """
    Parse a comma separated list of positive integers ("64,128,256").

    Args:
        text: String, or an already parsed int / list

    Returns:
        List of ints
    """
    if isinstance(text, (list, tuple)):
        items = list(text)
    elif isinstance(text, (int, np.integer)):
        items = [int(text)]
    else:
        items = [item for item in str(text).split(',') if item.strip()]
    values = []
    for item in items:
        try:
            values.append(int(str(item).strip()))
        except ValueError:
            raise ConfigError(f"Expected an integer list, got {text!r}")
    return values


def parse_timestamps(timestamps):
    """Timestamps as pandas datetimes; unparsable entries become NaT."""
    return pd.to_datetime(pd.Series(list(timestamps), dtype=object), errors='coerce')


def check_monotonic(timestamps, logger=None):
    """
    Check that timestamps are strictly increasing.

    Out-of-order or unparsable timestamps are not fatal: they are reported as
    a warning and the caller keeps the file order.

    Args:
        timestamps: Sequence of timestamp strings
        logger: Logger instance for logging

    Returns:
        True if every timestamp parses and the sequence strictly increases
    """
    parsed = parse_timestamps(timestamps)
    if parsed.isna().any():
        bad = int(parsed.isna().sum())
        if logger:
            logger.warning(f"NonMonotonicTimestamps: {bad} timestamps could not be parsed")
        return False
    diffs = parsed.diff().iloc[1:]
    if (diffs <= pd.Timedelta(0)).any():
        first = int(np.argmax((diffs <= pd.Timedelta(0)).to_numpy())) + 1
        if logger:
            logger.warning(f"NonMonotonicTimestamps: order breaks at data row {first}")
        return False
    return True


def infer_steps_per_hour(timestamps, default=1):
    """
    Sampling rate in steps per hour from the median timestamp spacing.

    Args:
        timestamps: Sequence of timestamp strings
        default: Returned when the spacing cannot be determined

    Returns:
        Positive int (1 for hourly data, 4 for 15-minute data)
    """
    parsed = parse_timestamps(timestamps).dropna()
    if len(parsed) < 2:
        return default
    spacing = parsed.diff().iloc[1:].median()
    if pd.isna(spacing) or spacing <= pd.Timedelta(0):
        return default
    steps = pd.Timedelta(hours=1) / spacing
    if steps < 1 or abs(steps - round(steps)) > 1e-6:
        return default
    return int(round(steps))
