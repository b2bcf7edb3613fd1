"""
Command-line interface for the CASA forecaster.

Exit codes: 0 success, 1 unexpected error, 2 config/usage error, 3 data error,
4 divergence, 5 shape/config mismatch, 6 insufficient bench points,
7 gradient check failure.
"""
import argparse
import logging
import os
import sys

from casa_forecaster.analysis.correlation import correlation_report, pool_windows
from casa_forecaster.analysis.scaling import make_factory, scaling_benchmark
from casa_forecaster.exceptions import (
    CasaError,
    CheckpointError,
    ConfigError,
    ConfigMismatch,
    DataError,
    DivergenceDetected,
    IndexOutOfRange,
    InsufficientPoints,
    InvalidArgument,
    NonFiniteGradient,
    ShapeMismatch,
    StateMismatch,
)
from casa_forecaster.forecaster import CasaForecaster
from casa_forecaster.models.casa import ModelConfig, gradient_audit
from casa_forecaster.training.trainer import evaluate
from casa_forecaster.utils.config import load_config
from casa_forecaster.utils.io import matrix_rows, save_to_csv, save_to_json
from casa_forecaster.utils.parsers import parse_int_list

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGENCE = 4
EXIT_MISMATCH = 5
EXIT_BENCH_POINTS = 6
EXIT_GRADCHECK = 7

EXIT_CODES = (
    (ConfigMismatch, EXIT_MISMATCH),
    (ShapeMismatch, EXIT_MISMATCH),
    (StateMismatch, EXIT_MISMATCH),
    (ConfigError, EXIT_CONFIG),
    (IndexOutOfRange, EXIT_CONFIG),
    (InvalidArgument, EXIT_CONFIG),
    (DataError, EXIT_DATA),
    (CheckpointError, EXIT_DATA),
    (DivergenceDetected, EXIT_DIVERGENCE),
    (NonFiniteGradient, EXIT_DIVERGENCE),
    (InsufficientPoints, EXIT_BENCH_POINTS),
)

GRADCHECK_MAX_VARS = 4
GRADCHECK_MAX_D = 8


def exit_code_for(error):
    for error_type, code in EXIT_CODES:
        if isinstance(error, error_type):
            return code
    return 1


def parse_args(argv=None):
    """Parse command line arguments."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', default=None,
                        help='Flat section.key = value config file')
    common.add_argument('--set', action='append', default=[], metavar='KEY=VALUE',
                        help='Override a config key (repeatable, wins over the file)')
    common.add_argument('--out', default=None,
                        help='Output directory (overrides run.out)')
    common.add_argument('--debug', action='store_true',
                        help='Enable debug mode (more verbose logging)')

    parser = argparse.ArgumentParser(description='CASA multivariate time series forecaster')
    commands = parser.add_subparsers(dest='command', required=True)

    train_parser = commands.add_parser('train', parents=[common], help='Train a model and evaluate it')
    train_parser.add_argument('--dump-window', type=int, action='append', default=[],
                              help='Write the prediction CSV of this test window (repeatable)')
    train_parser.add_argument('--resume', default=None, metavar='CHECKPOINT',
                              help='Continue from the parameters and Adam state of a checkpoint')

    eval_parser = commands.add_parser('eval', parents=[common], help='Evaluate a checkpoint on the test split')
    eval_parser.add_argument('--checkpoint', required=True, help='Checkpoint file')
    eval_parser.add_argument('--dump-window', type=int, action='append', default=[],
                             help='Write the prediction CSV of this test window (repeatable)')

    bench_parser = commands.add_parser('bench', parents=[common], help='Complexity scaling benchmark')
    bench_parser.add_argument('--axis', choices=['N', 'L', 'H'], default=None, help='Swept dimension')
    bench_parser.add_argument('--values', default=None, help='Comma separated axis values')
    bench_parser.add_argument('--attention', choices=['casa', 'baseline'], default=None,
                              help='Token-mixing variant to measure')
    bench_parser.add_argument('--scope', default=None,
                              help='Stage to time: auto, model, mixing, embedding, predictor')

    analyze_parser = commands.add_parser('analyze', parents=[common], help='Correlation study of checkpoints')
    analyze_parser.add_argument('checkpoints', nargs='*', help='Checkpoint files to compare with the truth')

    commands.add_parser('gradcheck', parents=[common], help='Finite-difference audit of a tiny model')

    return parser.parse_args(argv)


def cmd_train(forecaster, args):
    summary = forecaster.run_full_training(dump_windows=args.dump_window, resume=args.resume)
    print(f"mse={summary['mse']:.6f} mae={summary['mae']:.6f} best_epoch={summary['best_epoch']}")
    return EXIT_OK


def cmd_eval(forecaster, args):
    forecaster.load_data()
    model = forecaster.load_model(args.checkpoint)
    row, _ = forecaster.evaluate(model)
    baseline = forecaster.mean_predictor_mse()
    forecaster.logger.info(f"Mean-predictor test MSE {baseline:.6f}")
    for index in args.dump_window:
        forecaster.dump_predictions(index, model)
    forecaster.write_config()
    print(f"mse={row['mse']:.6f} mae={row['mae']:.6f}")
    return EXIT_OK


def cmd_bench(forecaster, args):
    config = forecaster.config
    bench = config.bench
    if args.axis:
        bench.axis = args.axis
    if args.values:
        bench.values = parse_int_list(args.values)
    if args.scope:
        bench.scope = args.scope
    if args.attention:
        config.model.attention = args.attention

    # Hidden and FFN widths follow the bench width
    base = ModelConfig.from_dict({**config.model.to_dict(), 'd_model': bench.d_model,
                                  'hidden_channels': None, 'ffn_dim': None})
    factory = make_factory(base, bench.axis, bench.scope, batch=bench.batch,
                           backward=bench.backward, seed=config.train.seed)
    report = scaling_benchmark(factory, bench.axis, bench.values, reps=bench.reps,
                               attention=base.attention, scope=bench.scope, batch=bench.batch,
                               logger=forecaster.logger)

    save_to_csv(report.rows(), 'scaling_points', forecaster.output_dir, forecaster.logger)
    save_to_json(report.summary(), 'scaling_summary', forecaster.output_dir, forecaster.logger)
    forecaster.write_config()
    print(f"axis={report.axis} attention={report.attention} scope={report.scope} "
          f"time_slope={report.time_slope:.3f} memory_slope={report.memory_slope:.3f}")
    return EXIT_OK


def _source_names(paths):
    names = []
    for path in paths:
        stem = os.path.splitext(os.path.basename(path))[0]
        parent = os.path.basename(os.path.dirname(os.path.abspath(path)))
        name = parent if stem == 'best' and parent else stem
        while name in names or name == 'truth':
            name = f"{name}_{len(names)}"
        names.append(name)
    return names


def cmd_analyze(forecaster, args):
    if not args.checkpoints:
        print("error: analyze needs at least one checkpoint", file=sys.stderr)
        return EXIT_CONFIG

    forecaster.load_data()
    truth, predictions = None, {}
    for name, path in zip(_source_names(args.checkpoints), args.checkpoints):
        model = forecaster.load_model(path)
        result = evaluate(model, forecaster.scaled, forecaster.ranges.test, forecaster.config.train.batch_size)
        if truth is None:
            truth = pool_windows(result.targets)
        predictions[name] = pool_windows(result.predictions)

    report = correlation_report(truth, predictions, logger=forecaster.logger)
    out, logger = forecaster.output_dir, forecaster.logger
    names = forecaster.table.variate_names
    for source, matrix in report.matrices.items():
        save_to_csv(matrix_rows(matrix, names), f"correlation_{source}", out, logger)
    kde_rows = []
    for i, x in enumerate(report.grid):
        row = {'x': float(x)}
        row.update({source: float(density[i]) for source, density in report.densities.items()})
        kde_rows.append(row)
    save_to_csv(kde_rows, 'correlation_kde', out, logger)
    save_to_csv(report.metrics, 'correlation_metrics', out, logger)
    save_to_json({'metrics': report.metrics, 'degenerate': report.degenerate}, 'correlation_summary', out, logger)
    forecaster.write_config()

    for row in report.metrics:
        print(f"{row['source']}: mse={row['mse']:.6f} cosine={row['cosine']:.6f} "
              f"ssim={row['ssim']:.6f} pdf_mse={row['pdf_mse']:.6f}")
    return EXIT_OK


def cmd_gradcheck(forecaster, args):
    config = forecaster.config
    g = config.gradcheck
    if g.n_vars > GRADCHECK_MAX_VARS or g.d_model > GRADCHECK_MAX_D:
        raise ConfigError(f"gradcheck needs N <= {GRADCHECK_MAX_VARS} and D <= {GRADCHECK_MAX_D}, "
                          f"got N={g.n_vars}, D={g.d_model}")
    tiny = ModelConfig.from_dict({
        **config.model.to_dict(),
        'n_vars': g.n_vars, 'seq_len': g.seq_len, 'pred_len': g.pred_len, 'd_model': g.d_model,
        'n_blocks': g.n_blocks, 'kernel_size': g.kernel_size, 'hidden_channels': None, 'ffn_dim': None,
    })
    results = gradient_audit(tiny, batch=g.batch, seed=config.train.seed, eps=g.eps, logger=forecaster.logger)
    name, error, _ = max(results, key=lambda item: item[1])
    forecaster.write_config()
    print(f"max_rel_err={error:.6e} parameter={name}")
    if not error < g.tolerance:
        print(f"gradcheck failed: {name} has relative error {error:.3e} >= {g.tolerance:.1e}", file=sys.stderr)
        return EXIT_GRADCHECK
    return EXIT_OK


COMMANDS = {
    'train': cmd_train,
    'eval': cmd_eval,
    'bench': cmd_bench,
    'analyze': cmd_analyze,
    'gradcheck': cmd_gradcheck,
}


def main(argv=None):
    """Main entry point for the CLI."""
    args = parse_args(argv)
    log_level = logging.DEBUG if args.debug else logging.INFO

    forecaster = None
    try:
        config = load_config(args.config, args.set)
        if args.out:
            config.run.out = args.out
        forecaster = CasaForecaster(config, log_level=log_level)
        return COMMANDS[args.command](forecaster, args)
    except CasaError as e:
        print(f"error: {e}", file=sys.stderr)
        return exit_code_for(e)
    finally:
        if forecaster is not None:
            forecaster.close()


if __name__ == "__main__":
    sys.exit(main())
