#!/usr/bin/env python3
"""
Command-line interface: simulate, fit, select, predict, evaluate, benchmark
and cache management.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

import sys
import logging
import argparse
from dataclasses import replace
from typing import List, Optional

import numpy as np
import pandas as pd

from .cache import Cache
from .config import load_settings
from .data_io import (fit_cache_key, from_model_file, load_events, load_model, save_events, save_model,
                      to_model_file, write_table)
from .engine import background_mode, fit, predictive_table
from .errors import (ArgumentError, DataError, DomainError, ExplosionError, NumericalFailure, SelectionError,
                     StateError)
from .evaluation import (benchmark_fit_time, benchmark_inducing, evaluate_splits, grid_select, hll, l2_mu, l2_phi,
                         mode_function)
from .models import EvalConfig, FitConfig, KernelConfig, Priors
from .simulator import SimConfig, get_kernel, simulate, simulate_clusters

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that reports usage errors by exception instead of exiting with code 2"""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'")


def _int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'")


def _emit(table, output: Optional[str]):
    text = write_table(table, output)
    if output is None:
        sys.stdout.write(text)
    else:
        logging.info(f"Wrote {len(table)} rows to {text}")


def _fit_config(args) -> FitConfig:
    return FitConfig(
        max_em_iterations=args.max_iterations,
        elbo_relative_tolerance=args.tolerance,
        m_step_iterations=args.m_step_iterations,
        m_step_method=args.m_step_method,
        num_inducing=args.num_inducing,
        support=args.support,
        support_fraction=None if args.no_truncation else args.support_fraction,
        grid_over_support=args.grid_over_support,
        init_mean=args.init_mean,
        seed=args.seed,
    )


def _load(args):
    return load_events(args.events, fmt=args.format, scale_to=args.scale_to, t_max=args.t_max)


def _priors(args, events) -> Priors:
    default = Priors.default_for(len(events), events.duration)
    return Priors(k0=args.k0 if args.k0 is not None else default.k0,
                  c0=args.c0 if args.c0 is not None else default.c0)


def _cache(args) -> Optional[Cache]:
    return Cache(args.cache_dir, ttl=args.cache_ttl) if args.use_cache else None


def simulate_command(args):
    kernel = get_kernel(args.kernel)
    if args.scale != 1.0:
        kernel = kernel.scaled(args.scale)
    cfg = SimConfig(mu=args.mu, kernel=kernel, t_max=args.t_max, seed=args.seed,
                    record_branching=args.branching_output is not None)
    result = simulate_clusters(cfg) if args.method == 'clusters' else simulate(cfg)
    save_events(result.events, args.output, fmt=args.output_format)
    logging.info(f"Simulated {len(result.events)} events with kernel '{kernel.name}' to {args.output}")
    if args.branching_output is not None:
        write_table(pd.DataFrame({'time': result.events.times, 'parent': result.parents}), args.branching_output)


def fit_command(args):
    events = _load(args)
    priors = _priors(args, events)
    kernel_cfg = KernelConfig(gamma=args.gamma, alphas=[args.alpha])
    fit_cfg = _fit_config(args)
    cache = _cache(args)
    if cache is not None:
        model = cache.get_or_fit(fit_cache_key(events, kernel_cfg, priors, fit_cfg),
                                 lambda: to_model_file(fit(events, priors=priors, kernel_cfg=kernel_cfg,
                                                           cfg=fit_cfg, verbose=True)))
    else:
        model = to_model_file(fit(events, priors=priors, kernel_cfg=kernel_cfg, cfg=fit_cfg, verbose=True))
    model.metadata.update({'events': args.events, **events.metadata})
    save_model(model, args.output)
    logging.info(f"Saved model to {args.output} (bound {model.report.final_bound:.6f})")
    if args.report:
        report = model.report
        _emit(pd.DataFrame({'iteration': np.arange(1, report.iterations + 1), 'elbo': report.elbo_trace,
                            'bound': report.bound_trace, 'kl_gamma': report.kl_gamma_trace,
                            'kl_u': report.kl_u_trace, 'seconds': report.iteration_seconds,
                            'm_step_stalled': report.m_step_stalls}), args.report)


def _truth(args):
    if args.truth_kernel is None:
        return None
    if args.truth_mu is None:
        raise ArgumentError("--truth-mu is required with --truth-kernel")
    return args.truth_mu, get_kernel(args.truth_kernel)


def select_command(args):
    events = _load(args)
    priors = _priors(args, events)
    defaults = EvalConfig()
    test = load_events(args.test_events, t_max=events.t_max) if args.test_events else None
    eval_cfg = EvalConfig(support=[0.0, args.support_max])
    result = grid_select(events, args.gammas or defaults.gammas, args.alphas or defaults.alphas,
                         priors=priors, fit_cfg=_fit_config(args), workers=args.workers or 1,
                         cache=_cache(args), truth=_truth(args), test=test, eval_cfg=eval_cfg)
    model = to_model_file(result.best_fit, metadata={'events': args.events, 'selected_by': 'grid'})
    save_model(model, args.output)
    logging.info(f"Selected gamma={result.best.gamma:.6g}, alpha={result.best.alphas[0]:.6g}; model saved to {args.output}")
    _emit(result.table, args.contour)


def predict_command(args):
    model = from_model_file(load_model(args.model))
    lags = np.linspace(args.start, args.stop, args.points)
    table = predictive_table(model.state, model.gp, lags, interval=(args.lower, args.upper))
    logging.info(f"Background intensity mode: {background_mode(model.state):.17g}")
    _emit(table, args.output)


def evaluate_command(args):
    model = from_model_file(load_model(args.model))
    events = _load(args)
    eval_cfg = EvalConfig(n_splits=max(args.splits, 1), seed=args.seed, support=[0.0, args.support_max])
    truth = _truth(args)

    phi = mode_function(model, args.support_max)
    summary = {'split': 'full', 'n_train': np.nan, 'n_test': len(events),
               'hll': hll(events, background_mode(model.state), phi, support=args.support_max),
               'mu_mode': background_mode(model.state), 'bound': model.report.final_bound,
               'iterations': model.report.iterations}
    if truth is not None:
        summary['l2_mu'] = l2_mu(summary['mu_mode'], truth[0])
        summary['l2_phi'] = l2_phi(phi, truth[1], eval_cfg.support, eval_cfg.quadrature_points)
    rows = [summary]
    if args.splits > 0:
        if model.cfg is not None:
            fit_cfg = model.cfg
        else:
            logging.warning(f"{args.model} does not record its fit settings, refitting with defaults")
            fit_cfg = FitConfig(num_inducing=model.gp.grid.size, support=model.gp.support, support_fraction=None,
                                grid_over_support=model.gp.lag_domain.upper[0] < model.gp.domain.widths[0])
        if args.max_iterations is not None:
            fit_cfg = replace(fit_cfg, max_em_iterations=args.max_iterations)
        splits = evaluate_splits(events, model.gp.cfg, fit_cfg=fit_cfg, eval_cfg=eval_cfg, truth=truth)
        rows.extend(splits.to_dict('records'))
    _emit(pd.DataFrame(rows), args.output)


def benchmark_command(args):
    if args.inducing:
        table = benchmark_inducing(args.inducing, n_events=args.events, seed=args.seed,
                                   max_iterations=args.max_iterations, support=args.support)
        _emit(table, args.output)
        return
    result = benchmark_fit_time(args.sizes, seed=args.seed, num_inducing=args.num_inducing,
                                iterations=args.iterations, support=args.support)
    table = result.table.copy()
    table['slope'] = result.slope
    table['correlation'] = result.correlation
    logging.info(f"Log-log slope {result.slope:.4f}, correlation {result.correlation:.4f}")
    _emit(table, args.output)


def cache_command(args):
    cache = Cache(args.cache_dir, ttl=args.cache_ttl)
    if args.cache_action == 'list':
        items = cache.list_cache_items(args.pattern)
        if not items:
            print(f"No cache items found in {args.cache_dir}")
            return
        print(f"Found {len(items)} cache items:")
        for item in items:
            print(f"  - {item['hash']}  {item['timestamp']}  {item['size']} B"
                  f"  {'expired' if item['is_expired'] else 'valid'}")
            if args.verbose:
                print(f"    Key: {item['key']}")
    elif args.expired:
        print(f"Cleared {cache.clear_expired()} expired cache items")
    elif args.all:
        print(f"Cleared {cache.clear_all()} cache items")
    else:
        raise UsageError("No clear option specified. Use --expired or --all")


def _add_input_arguments(parser):
    parser.add_argument('events', help='Events file (CSV with one timestamp per line, or JSON)')
    parser.add_argument('--format', choices=['csv', 'json'], help='Events format (default: from suffix)')
    parser.add_argument('--scale-to', type=float, help='Rescale timestamps onto [0, SCALE_TO)')
    parser.add_argument('--t-max', type=float, help='End of the observation window')


def _add_fit_arguments(parser):
    defaults = FitConfig()
    parser.add_argument('--num-inducing', type=int, default=defaults.num_inducing, help='Inducing points')
    parser.add_argument('--support', type=float, help='Truncation length of the triggering kernel')
    parser.add_argument('--support-fraction', type=float, default=defaults.support_fraction,
                        help='Truncation length as a fraction of the window (default: %(default)s)')
    parser.add_argument('--no-truncation', action='store_true', help='Consider every earlier event as a parent')
    parser.add_argument('--grid-over-support', action='store_true',
                        help='Place inducing points over the support instead of the whole window')
    parser.add_argument('--max-iterations', type=int, default=defaults.max_em_iterations)
    parser.add_argument('--tolerance', type=float, default=defaults.elbo_relative_tolerance,
                        help='Relative ELBO change that stops EM')
    parser.add_argument('--m-step-iterations', type=int, default=defaults.m_step_iterations)
    parser.add_argument('--m-step-method', choices=['lbfgs', 'gradient'], default=defaults.m_step_method)
    parser.add_argument('--init-mean', choices=['rate', 'prior'], default=defaults.init_mean)
    parser.add_argument('--k0', type=float, help='Gamma prior shape of the background rate')
    parser.add_argument('--c0', type=float, help='Gamma prior scale of the background rate')
    parser.add_argument('--seed', type=int, default=0)
    parser.add_argument('--use-cache', action='store_true', help='Reuse fits stored in the cache directory')


def build_parser(settings=None) -> argparse.ArgumentParser:
    settings = settings or load_settings()
    parser = _Parser(
        prog='vb-hawkes',
        description='Variational Bayesian Hawkes processes with a squared sparse-GP triggering kernel',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Simulate a sequence from the sine kernel
  vb-hawkes simulate --kernel sin --mu 10 --t-max 3.14159265 --seed 7 -o events.csv

  # Fit with fixed hyperparameters
  vb-hawkes fit events.csv --gamma 1 --alpha 0.1 -o model.json --report trace.csv

  # Select hyperparameters on a grid and write the contour table
  vb-hawkes select events.csv --gammas 0.1,1,10 --alphas 0.01,0.1,1 -o model.json --contour contour.csv

  # Posterior triggering kernel with its [0.1, 0.9] band
  vb-hawkes predict model.json --stop 1.4 --points 200

  # Held-out log-likelihood over splits, with L2 errors against the true kernel
  vb-hawkes evaluate model.json events.csv --truth-kernel sin --truth-mu 10

  # Per-iteration fit time against sequence length
  vb-hawkes benchmark --sizes 250,500,1000,2000

  # Fit time and convergence against the number of inducing points
  vb-hawkes benchmark --inducing 5,10,20
"""
    )
    parser.add_argument('--log-level', default=settings.log_level,
                        help='Logging level (default: VB_HAWKES_LOG_LEVEL env var or INFO)')
    parser.add_argument('--cache-dir', type=str, default=settings.cache_dir,
                        help='Cache directory path (default: CACHE_DIR env var or .cache)')
    parser.add_argument('--cache-ttl', type=int, default=settings.cache_ttl,
                        help='Cache TTL in seconds, -1 never expires (default: CACHE_TTL env var or 24 hours)')

    subparsers = parser.add_subparsers(dest='command', help='Command to run')

    sim = subparsers.add_parser('simulate', help='Simulate a Hawkes sequence')
    sim.add_argument('--kernel', default='sin', help='sin, cos, exp, zero or a lag,value CSV file')
    sim.add_argument('--mu', type=float, default=10.0, help='Background rate')
    sim.add_argument('--t-max', type=float, default=float(np.pi), help='Window length')
    sim.add_argument('--scale', type=float, default=1.0, help='Multiply the kernel by this factor')
    sim.add_argument('--seed', type=int, default=0)
    sim.add_argument('--method', choices=['thinning', 'clusters'], default='thinning')
    sim.add_argument('--output', '-o', required=True, help='Events file to write')
    sim.add_argument('--output-format', choices=['csv', 'json'])
    sim.add_argument('--branching-output', help='Write the true parent of each event to this CSV')

    fit_parser = subparsers.add_parser('fit', help='Fit a model with fixed hyperparameters')
    _add_input_arguments(fit_parser)
    fit_parser.add_argument('--gamma', type=float, default=1.0, help='Kernel variance')
    fit_parser.add_argument('--alpha', type=float, default=1.0, help='Kernel length-scale')
    _add_fit_arguments(fit_parser)
    fit_parser.add_argument('--output', '-o', required=True, help='Model file to write')
    fit_parser.add_argument('--report', help='Write the per-iteration trace to this CSV')

    select = subparsers.add_parser('select', help='Grid search over (gamma, alpha) by the tighter bound')
    _add_input_arguments(select)
    select.add_argument('--gammas', type=_float_list, help='Comma-separated kernel variances')
    select.add_argument('--alphas', type=_float_list, help='Comma-separated length-scales')
    select.add_argument('--workers', type=int, default=settings.workers,
                        help='Concurrent fits (default: VB_HAWKES_WORKERS env var or 1)')
    _add_fit_arguments(select)
    select.add_argument('--output', '-o', required=True, help='Model file for the selected configuration')
    select.add_argument('--contour', help='Write the (gamma, alpha, bound, ...) table to this CSV')
    select.add_argument('--truth-kernel', help='Generating kernel name or CSV, adds l2 columns to the contour')
    select.add_argument('--truth-mu', type=float, help='Generating background rate')
    select.add_argument('--test-events', help='Held-out events file, adds an hll column to the contour')
    select.add_argument('--support-max', type=float, default=1.4, help='Predictive support [0, SUPPORT_MAX]')

    predict = subparsers.add_parser('predict', help='Posterior triggering kernel on a lag grid')
    predict.add_argument('model', help='Model file')
    predict.add_argument('--start', type=float, default=0.0)
    predict.add_argument('--stop', type=float, default=1.4)
    predict.add_argument('--points', type=int, default=100)
    predict.add_argument('--lower', type=float, default=0.1, help='Lower credible quantile')
    predict.add_argument('--upper', type=float, default=0.9, help='Upper credible quantile')
    predict.add_argument('--output', '-o', help='Table file (default: stdout)')

    evaluate = subparsers.add_parser('evaluate', help='Held-out log-likelihood and L2 errors')
    evaluate.add_argument('model', help='Model file')
    _add_input_arguments(evaluate)
    evaluate.add_argument('--splits', type=int, default=EvalConfig().n_splits, help='Train/test splits')
    evaluate.add_argument('--seed', type=int, default=0)
    evaluate.add_argument('--support-max', type=float, default=1.4, help='Predictive support [0, SUPPORT_MAX]')
    evaluate.add_argument('--max-iterations', type=int, help='EM iterations per split (default: as stored in the model)')
    evaluate.add_argument('--truth-kernel', help='Generating kernel name or CSV, enables L2 columns')
    evaluate.add_argument('--truth-mu', type=float, help='Generating background rate')
    evaluate.add_argument('--output', '-o', help='Table file (default: stdout)')

    bench = subparsers.add_parser('benchmark', help='Per-iteration fit time against sequence length or inducing points')
    bench.add_argument('--sizes', type=_int_list, default=[250, 500, 1000, 2000])
    bench.add_argument('--seed', type=int, default=0)
    bench.add_argument('--iterations', type=int, default=5)
    bench.add_argument('--num-inducing', type=int, default=10)
    bench.add_argument('--support', type=float, default=1.0)
    bench.add_argument('--inducing', type=_int_list,
                       help='Sweep these inducing-point counts on one sequence instead of the sizes')
    bench.add_argument('--events', type=int, default=1000, help='Approximate sequence length of the inducing sweep')
    bench.add_argument('--max-iterations', type=int, default=FitConfig().max_em_iterations,
                       help='EM iterations allowed per fit in the inducing sweep')
    bench.add_argument('--output', '-o', help='Table file (default: stdout)')

    cache = subparsers.add_parser('cache', help='Inspect or clear cached fits')
    cache_actions = cache.add_subparsers(dest='cache_action', help='Cache action')
    cache_list = cache_actions.add_parser('list', help='List cache items')
    cache_list.add_argument('--pattern', help='Only items whose key contains this text')
    cache_list.add_argument('--verbose', '-v', action='store_true', help='Show the full key')
    cache_clear = cache_actions.add_parser('clear', help='Clear cache items')
    cache_clear.add_argument('--expired', action='store_true', help='Clear expired cache items')
    cache_clear.add_argument('--all', action='store_true', help='Clear all cache items')

    return parser


COMMANDS = {
    'simulate': simulate_command,
    'fit': fit_command,
    'select': select_command,
    'predict': predict_command,
    'evaluate': evaluate_command,
    'benchmark': benchmark_command,
    'cache': cache_command,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point; returns the process exit code"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:
        return int(e.code or 0)

    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
    if args.command is None or (args.command == 'cache' and args.cache_action is None):
        parser.print_help()
        return EXIT_USAGE

    try:
        COMMANDS[args.command](args)
    except (UsageError, ArgumentError) as e:
        logging.error(str(e))
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as e:
        logging.error(str(e))
        return EXIT_DATA
    except (NumericalFailure, StateError, ExplosionError, SelectionError, DomainError) as e:
        logging.error(str(e))
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
