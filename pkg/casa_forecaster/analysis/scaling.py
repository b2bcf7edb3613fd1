"""
Empirical complexity benchmark: wall time and peak allocation versus N, L or H.
"""
import copy
import logging
import statistics
import time
import tracemalloc
from dataclasses import dataclass, field
from typing import List

import numpy as np

from casa_forecaster.autograd import functional as F
from casa_forecaster.autograd.tensor import Tape, Tensor
from casa_forecaster.exceptions import ConfigError, InsufficientPoints
from casa_forecaster.models.casa import (
    CasaModel,
    build_tree,
    embed_series,
    estimate_flops,
    init_params,
    mixing_sublayer,
    model_forward,
)
from casa_forecaster.models.layers import linear_forward, revin_denormalize, revin_normalize

AXES = {'N': 'n_vars', 'L': 'seq_len', 'H': 'pred_len'}
SCOPES = ('auto', 'model', 'mixing', 'embedding', 'predictor')
AUTO_SCOPE = {'N': 'mixing', 'L': 'embedding', 'H': 'predictor'}
MIN_POINTS = 4


@dataclass
class ScalingPoint:
    value: int
    seconds: float = float('nan')
    peak_bytes: int = 0
    macs: int = 0
    failed: bool = False
    error: str = ''


@dataclass
class ScalingReport:
    axis: str
    attention: str
    scope: str
    points: List[ScalingPoint] = field(default_factory=list)
    time_slope: float = float('nan')
    memory_slope: float = float('nan')

    def rows(self):
        return [{'axis': self.axis, 'value': p.value, 'attention': self.attention, 'scope': self.scope,
                 'seconds': p.seconds, 'peak_bytes': p.peak_bytes, 'macs': p.macs,
                 'failed': p.failed, 'error': p.error} for p in self.points]

    def summary(self):
        return {'axis': self.axis, 'attention': self.attention, 'scope': self.scope,
                'time_slope': self.time_slope, 'memory_slope': self.memory_slope,
                'points': len(self.points), 'failed': sum(p.failed for p in self.points)}


def fit_slope(xs, ys):
    """
    Least-squares slope of log(y) against log(x).

    Args:
        xs: Axis values
        ys: Measurements (positive)

    Returns:
        Fitted exponent
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    keep = (xs > 0) & (ys > 0) & np.isfinite(ys)
    if keep.sum() < MIN_POINTS:
        raise InsufficientPoints(f"need at least {MIN_POINTS} valid points to fit a slope, got {int(keep.sum())}")
    slope, _ = np.polyfit(np.log(xs[keep]), np.log(ys[keep]), 1)
    return float(slope)


def check_values(values):
    values = [int(v) for v in values]
    if len(values) < MIN_POINTS:
        raise InsufficientPoints(f"need at least {MIN_POINTS} axis values, got {len(values)}")
    if any(b <= a for a, b in zip(values, values[1:])) or values[0] <= 0:
        raise InsufficientPoints(f"axis values must be positive and strictly increasing, got {values}")
    return values


def measure(run, reps=3):
    """
    Median wall seconds of `run` after one warmup call, and its peak traced allocation.

    Args:
        run: Zero-argument callable performing one iteration
        reps: Timed repetitions

    Returns:
        Tuple (median seconds, peak bytes above the pre-call baseline)
    """
    run()
    timings = []
    for _ in range(reps):
        started = time.perf_counter()
        run()
        timings.append(time.perf_counter() - started)

    tracemalloc.start()
    try:
        baseline, _ = tracemalloc.get_traced_memory()
        tracemalloc.reset_peak()
        run()
        _, peak = tracemalloc.get_traced_memory()
    finally:
        tracemalloc.stop()
    return statistics.median(timings), max(int(peak - baseline), 0)


def resolve_scope(axis, scope):
    if axis not in AXES:
        raise ConfigError(f"bench axis must be one of {sorted(AXES)}, got {axis!r}")
    if scope not in SCOPES:
        raise ConfigError(f"bench scope must be one of {SCOPES}, got {scope!r}")
    return AUTO_SCOPE[axis] if scope == 'auto' else scope


def make_factory(base_config, axis, scope='auto', batch=16, backward=False, seed=0):
    """
    Build per-point iteration closures on unit-variance Gaussian noise.

    Args:
        base_config: ModelConfig; the swept field is replaced per point
        axis: 'N', 'L' or 'H'
        scope: Stage to time; 'auto' picks the stage that depends on the axis
        batch: Instances per iteration
        backward: Also run the backward pass (model scope only)
        seed: Seed for weights and data

    Returns:
        Callable value -> (run closure, ModelConfig)
    """
    stage = resolve_scope(axis, scope)

    def factory(value):
        config = copy.deepcopy(base_config)
        setattr(config, AXES[axis], int(value))
        if stage != 'model':
            config.n_blocks = 1
        config.validate()
        rng = np.random.default_rng(seed)
        N, L, H, D = config.n_vars, config.seq_len, config.pred_len, config.d_model
        x = rng.standard_normal((batch, N, L)).astype(config.np_dtype)

        if stage == 'model':
            model = CasaModel(config, seed=seed)
            target = Tensor(rng.standard_normal((batch, N, H)).astype(config.np_dtype))

            def run():
                if not backward:
                    return model_forward(model, x)
                tape = Tape()
                bound, _ = model.bind(tape)
                loss = F.mse_loss(model_forward(model, x, bound=bound), target)
                return tape.backward(loss)
            return run, config

        params = build_tree(config, {k: Tensor(v) for k, v in init_params(config, rng).items()})
        if stage == 'mixing':
            z = Tensor(rng.standard_normal((batch, N, D)).astype(config.np_dtype))
            block = params.blocks[0]

            def run():
                return mixing_sublayer(config, block, z)
        elif stage == 'embedding':
            def run():
                normed = revin_normalize(x, affine=params.revin)[0] if config.use_revin else x
                return embed_series(params.embed, normed)
        else:
            z = Tensor(rng.standard_normal((batch, N, D)).astype(config.np_dtype))
            state = revin_normalize(x, affine=params.revin)[1] if config.use_revin else None

            def run():
                y = linear_forward(params.predictor, z)
                return y if state is None else revin_denormalize(y, state)
        return run, config

    return factory


def scaling_benchmark(factory, axis, values, reps=3, attention='casa', scope='auto', batch=16, logger=None):
    """
    Measure one axis of the complexity grid and fit log-log slopes.

    Args:
        factory: Callable value -> (run closure, ModelConfig), see make_factory
        axis: 'N', 'L' or 'H'
        values: Strictly increasing axis values, at least four
        reps: Timed repetitions per point (median reported)
        attention: Label recorded in the report
        scope: Stage the factory times; recorded resolved, so 'auto' reads as the stage
        batch: Batch size used for the MAC estimate
        logger: Logger instance for logging

    Returns:
        ScalingReport
    """
    logger = logger or logging.getLogger("CASA-Forecaster")
    values = check_values(values)
    report = ScalingReport(axis=axis, attention=attention, scope=resolve_scope(axis, scope))
    logger.info(f"bench {axis}: timing the {report.scope} stage of {attention}")

    for value in values:
        point = ScalingPoint(value=value)
        try:
            run, config = factory(value)
            point.macs = int(estimate_flops(config, batch)['total'])
            point.seconds, point.peak_bytes = measure(run, reps)
            logger.info(f"bench {axis}={value}: {point.seconds * 1e3:.3f} ms, {point.peak_bytes / 2**20:.2f} MiB")
        except MemoryError as e:
            point.failed, point.error = True, f"OutOfMemory: {e}"
            logger.warning(f"bench {axis}={value} ran out of memory; recorded as a failed point")
        report.points.append(point)

    ok = [p for p in report.points if not p.failed]
    report.time_slope = fit_slope([p.value for p in ok], [p.seconds for p in ok])
    report.memory_slope = fit_slope([p.value for p in ok], [p.peak_bytes for p in ok])
    logger.info(f"bench {axis} ({report.scope}): time slope {report.time_slope:.3f}, memory slope {report.memory_slope:.3f}")
    return report
