"""
Per-window prediction dumps for plotting truth against forecast.
"""
import logging
import os

import numpy as np

from casa_forecaster.data.pipeline import slice_windows, window_starts
from casa_forecaster.exceptions import IndexOutOfRange
from casa_forecaster.utils.io import save_to_csv


def prediction_rows(table, start, truth, prediction):
    """One row per (step, variate) of a single [N, H] window."""
    rows = []
    for h in range(truth.shape[1]):
        index = start + h
        for r, name in enumerate(table.variate_names):
            rows.append({
                'step': h,
                'timestamp': table.timestamps[index] if index < len(table.timestamps) else '',
                'variate': name,
                'truth': float(truth[r, h]),
                'prediction': float(prediction[r, h]),
            })
    return rows


def prediction_dump(model, table, test_range, window_index, path, predict=None, scaler=None, source=None,
                    logger=None):
    """
    Write the forecast of one test window as CSV.

    Args:
        model: CasaModel
        table: SeriesTable the model reads its inputs from (standardized in a run)
        test_range: (start, stop) of the test split
        window_index: Position of the window among the split's windows
        path: Output CSV path
        predict: Optional callable inputs[B, N, L] -> predictions[B, N, H]
            replacing the model forward
        scaler: Scaler of `table`; predictions are mapped back to the original scale
        source: Unscaled SeriesTable; the truth column is read from it verbatim
        logger: Logger instance for logging

    Returns:
        Path to the CSV (H * N rows), or None when writing failed
    """
    logger = logger or logging.getLogger("CASA-Forecaster")
    config = model.config
    starts = window_starts(test_range, config.seq_len, config.pred_len)
    if not 0 <= window_index < len(starts):
        raise IndexOutOfRange(f"window {window_index} outside [0, {len(starts)}) for the test split")

    batch = slice_windows(table.values, starts[window_index:window_index + 1],
                          config.seq_len, config.pred_len)
    predict = predict or model.predict
    prediction = np.asarray(predict(batch.inputs), dtype=np.float64)[0]
    target_start = int(starts[window_index]) + config.seq_len
    truth = batch.targets[0]
    if scaler is not None:
        prediction = scaler.inverse(prediction.T).T
        truth = scaler.inverse(truth.T).T
    if source is not None:
        truth = source.values[target_start:target_start + config.pred_len].T
    rows = prediction_rows(source if source is not None else table, target_start, truth, prediction)

    output_dir, filename = os.path.split(path)
    stem = filename[:-4] if filename.endswith('.csv') else filename
    return save_to_csv(rows, stem, output_dir or '.', logger)
