"""
Dataset ingestion, splits, scaling and windowing.
"""
from casa_forecaster.data.pipeline import (
    Scaler,
    SeriesTable,
    SplitRanges,
    SplitSpec,
    WindowBatch,
    count_windows,
    fit_apply_scaler,
    load_csv,
    make_windows,
    resolve_split,
    synthetic_table,
    unscale,
)

__all__ = ['Scaler', 'SeriesTable', 'SplitRanges', 'SplitSpec', 'WindowBatch', 'count_windows',
           'fit_apply_scaler', 'load_csv', 'make_windows', 'resolve_split', 'synthetic_table', 'unscale']
