"""
Writers for run artifacts (metrics tables, summaries, matrices).

Writers never raise: a failed write is logged and reported as None.
"""
import os
import csv
import json

import numpy as np


def _plain(value):
    """Convert numpy scalars and arrays into JSON-serializable Python values."""
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, tuple):
        return list(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, (list, dict)):
        return json.dumps(value, default=_plain)
    if isinstance(value, np.generic):
        value = value.item()
    return str(value)


def _columns(rows):
    # First-seen order across all rows
    seen = {}
    for row in rows:
        seen.update(dict.fromkeys(row))
    return list(seen)


def _write_artifact(name, output_dir, logger, write):
    """
    Create output_dir and write one artifact through `write(handle)`.

    Args:
        name: File name with extension
        output_dir: Target directory
        logger: Logger instance or None
        write: Callable receiving the open text handle

    Returns:
        Path of the written file, None on failure
    """
    target = os.path.join(output_dir, name)
    try:
        os.makedirs(output_dir, exist_ok=True)
        with open(target, 'w', newline='', encoding='utf-8') as handle:
            write(handle)
    except Exception as e:
        if logger:
            logger.error(f"Could not write {name}: {e}")
        return None
    if logger:
        logger.info(f"Wrote {target}")
    return target


def save_to_csv(data, filename, output_dir, logger=None):
    """
    Write a list of row dictionaries as `<filename>.csv`.

    Floats are written with repr so they read back exactly; nested lists and
    dictionaries become JSON cells.

    Args:
        data: Row dictionaries; columns follow first appearance
        filename: File stem
        output_dir: Target directory
        logger: Logger instance for logging

    Returns:
        Path to the CSV, or None when there was nothing to write or the write failed
    """
    if not data:
        if logger:
            logger.warning(f"Nothing to write for {filename}.csv")
        return None

    def write(handle):
        writer = csv.DictWriter(handle, fieldnames=_columns(data))
        writer.writeheader()
        writer.writerows({key: _cell(value) for key, value in row.items()} for row in data)

    return _write_artifact(f"{filename}.csv", output_dir, logger, write)


def save_to_json(data, filename, output_dir, logger=None):
    """Write `data` as indented `<filename>.json`; numpy values are converted."""
    if not data:
        if logger:
            logger.warning(f"Nothing to write for {filename}.json")
        return None

    def write(handle):
        json.dump(data, handle, ensure_ascii=False, indent=2, default=_plain)

    return _write_artifact(f"{filename}.json", output_dir, logger, write)


def matrix_rows(matrix, names):
    """Rows of a labelled square matrix for save_to_csv."""
    rows = []
    for i, name in enumerate(names):
        row = {'variate': name}
        row.update({col: float(matrix[i, j]) for j, col in enumerate(names)})
        rows.append(row)
    return rows
