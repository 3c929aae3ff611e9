"""
Metrics, train/test splitting, hyperparameter selection by the tighter bound
and the fit-time benchmark.
"""

import time
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import integrate

from .cache import Cache
from .data_io import fit_cache_key, from_model_file, to_model_file
from .engine import FitResult, background_mode, candidate_pairs, fit, predictive_mode
from .errors import ArgumentError, SelectionError, VBHawkesError
from .models import EvalConfig, EventSequence, FitConfig, KernelConfig, Priors
from .simulator import SimConfig, TriggeringKernel, get_kernel, make_rng, simulate
from .special_functions import GTildeTable

PhiFunction = Callable[[np.ndarray], np.ndarray]


def l2_phi(phi_pred: PhiFunction, phi_true: PhiFunction, support: Sequence[float] = (0.0, 1.4),
           n_points: int = 1000) -> float:
    """(∫ (φ_pred - φ_true)^2)^0.5 by the trapezoid rule on a uniform grid"""
    grid = np.linspace(support[0], support[1], n_points)
    diff = np.asarray(phi_pred(grid), dtype=float) - np.asarray(phi_true(grid), dtype=float)
    return float(np.sqrt(max(integrate.trapezoid(diff ** 2, grid), 0.0)))


def l2_mu(mu_pred: float, mu_true: float) -> float:
    return abs(float(mu_pred) - float(mu_true))


def hll(test: EventSequence, mu_pred: float, phi_pred: PhiFunction, support: Optional[float] = None,
        quadrature_points: int = 2000) -> Optional[float]:
    """
    Held-out log-likelihood per point

    The intensity is μ + Σ φ(x_i - x_j) over earlier test events with lag inside
    ``support``. The compensator is μ|T| plus, per event, the integral of φ
    over [0, min(support, T_max - x_i)], read from a cumulative trapezoid table.

    Returns:
        Per-point log-likelihood, or None for an empty test sequence
    """
    n = len(test)
    if n == 0:
        return None
    times = test.times
    children, parents = candidate_pairs(times, support)
    excitation = np.zeros(n)
    if children.size:
        values = np.asarray(phi_pred(times[children] - times[parents]), dtype=float)
        excitation = np.bincount(children, weights=values, minlength=n)
    intensity = mu_pred + excitation
    if np.any(intensity <= 0):
        return float('-inf')

    windows = test.t_max - times
    if support is not None:
        windows = np.minimum(windows, support)
    lags = np.linspace(0.0, float(windows.max()), quadrature_points)
    cumulative = integrate.cumulative_trapezoid(np.asarray(phi_pred(lags), dtype=float), lags, initial=0.0)
    compensator = mu_pred * test.duration + float(np.sum(np.interp(windows, lags, cumulative)))
    return float((np.sum(np.log(intensity)) - compensator) / n)


def split(sequence: EventSequence, seed: int) -> Tuple[EventSequence, EventSequence]:
    """Assign every event to train or test with probability 1/2"""
    rng = make_rng(seed)
    mask = rng.uniform(size=len(sequence)) < 0.5
    return sequence.subset(mask), sequence.subset(~mask)


def mode_function(result: FitResult, support: Optional[float] = None) -> PhiFunction:
    """Posterior mode of φ as a vectorised function of the lag, zero outside [0, support]"""
    state, gp = result.state, result.gp

    def phi(lags):
        lags = np.atleast_1d(np.asarray(lags, dtype=float))
        out = np.asarray(predictive_mode(state, gp, lags), dtype=float).reshape(lags.shape)
        inside = lags >= 0
        if support is not None:
            inside &= lags <= support
        return np.where(inside, out, 0.0)
    return phi


@dataclass
class SelectionResult:
    best: KernelConfig
    best_bound: float
    table: pd.DataFrame
    fits: Dict[Tuple[float, float], FitResult] = field(default_factory=dict)

    @property
    def best_fit(self) -> FitResult:
        return self.fits[(self.best.gamma, self.best.alphas[0])]


def _fit_point(sequence: EventSequence, gamma: float, alpha: float, priors: Optional[Priors],
               fit_cfg: FitConfig, cache: Optional[Cache]) -> FitResult:
    kernel_cfg = KernelConfig(gamma=gamma, alphas=[alpha])
    if cache is None:
        return fit(sequence, priors=priors, kernel_cfg=kernel_cfg, cfg=fit_cfg)
    key = fit_cache_key(sequence, kernel_cfg, priors, fit_cfg)
    model = cache.get_or_fit(key, lambda: to_model_file(
        fit(sequence, priors=priors, kernel_cfg=kernel_cfg, cfg=fit_cfg)))
    return from_model_file(model)


def _score_point(result: FitResult, truth: Optional[Tuple[float, TriggeringKernel]],
                 test: Optional[EventSequence], eval_cfg: EvalConfig) -> Dict[str, Optional[float]]:
    support = eval_cfg.support[1]
    mu_pred = background_mode(result.state)
    phi_pred = mode_function(result, support)
    scores = {}
    if truth is not None:
        scores['l2_mu'] = l2_mu(mu_pred, truth[0])
        scores['l2_phi'] = l2_phi(phi_pred, truth[1], eval_cfg.support, eval_cfg.quadrature_points)
    if test is not None:
        scores['hll'] = hll(test, mu_pred, phi_pred, support=support)
    return scores


def grid_select(sequence: EventSequence, gammas: Sequence[float], alphas: Sequence[float],
                priors: Optional[Priors] = None, fit_cfg: Optional[FitConfig] = None,
                workers: int = 1, cache: Optional[Cache] = None,
                truth: Optional[Tuple[float, TriggeringKernel]] = None, test: Optional[EventSequence] = None,
                eval_cfg: Optional[EvalConfig] = None) -> SelectionResult:
    """
    Fit every (γ, α) pair and keep the one with the largest tighter bound

    Ties go to the smaller γ, then the smaller α. A fit that raises is logged,
    recorded with ``status='failed'`` and excluded.

    Args:
        truth: Optional (μ, φ) of the generating process; adds l2_mu and l2_phi columns
        test: Optional held-out sequence; adds an hll column
        eval_cfg: Predictive support and quadrature size for those columns

    Returns:
        SelectionResult with the winner and the contour table (gamma, alpha, bound, status, ...)

    Raises:
        SelectionError: if every grid point failed
    """
    fit_cfg = fit_cfg or FitConfig()
    eval_cfg = eval_cfg or EvalConfig()
    points = [(float(g), float(a)) for g in gammas for a in alphas]
    if not points:
        raise ArgumentError("Hyperparameter grid is empty")
    if priors is None:
        priors = Priors.default_for(len(sequence), sequence.duration)
    score_columns = (['l2_mu', 'l2_phi'] if truth is not None else []) + (['hll'] if test is not None else [])

    def run(point):
        gamma, alpha = point
        logging.info(f"Fitting grid point gamma={gamma:.6g}, alpha={alpha:.6g}")
        try:
            result = _fit_point(sequence, gamma, alpha, priors, fit_cfg, cache)
            scores = _score_point(result, truth, test, eval_cfg) if score_columns else {}
            return point, result, scores, None
        except (VBHawkesError, np.linalg.LinAlgError, FloatingPointError) as e:
            logging.warning(f"Grid point gamma={gamma:.6g}, alpha={alpha:.6g} failed: {e}")
            return point, None, {}, str(e)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        outcomes = list(executor.map(run, points))

    rows = []
    fits = {}
    for (gamma, alpha), result, scores, error in outcomes:
        if result is None or not np.isfinite(result.report.final_bound):
            rows.append({'gamma': gamma, 'alpha': alpha, 'bound': np.nan, 'elbo': np.nan,
                         'iterations': 0, 'status': 'failed', 'error': error or 'non-finite bound',
                         **{column: np.nan for column in score_columns}})
            continue
        fits[(gamma, alpha)] = result
        rows.append({'gamma': gamma, 'alpha': alpha, 'bound': result.report.final_bound,
                     'elbo': result.report.elbo_trace[-1], 'iterations': result.report.iterations,
                     'status': 'ok', 'error': '', **scores})
    table = pd.DataFrame(rows)

    if not fits:
        raise SelectionError(f"All {len(points)} grid points failed")
    best_gamma, best_alpha = min(fits, key=lambda p: (-fits[p].report.final_bound, p[0], p[1]))
    best = fits[(best_gamma, best_alpha)]
    logging.info(f"Selected gamma={best_gamma:.6g}, alpha={best_alpha:.6g} with bound {best.report.final_bound:.6f}")
    return SelectionResult(best=best.gp.cfg, best_bound=best.report.final_bound, table=table, fits=fits)


def evaluate_splits(sequence: EventSequence, kernel_cfg: KernelConfig, fit_cfg: Optional[FitConfig] = None,
                    eval_cfg: Optional[EvalConfig] = None, truth: Optional[Tuple[float, TriggeringKernel]] = None
                    ) -> pd.DataFrame:
    """
    Fit on the train half and score HLL on the test half, for several splits

    Args:
        sequence: Full event sequence
        kernel_cfg: GP hyperparameters used for every split
        fit_cfg: EM settings
        eval_cfg: Split count, seed and predictive support
        truth: Optional (μ, φ) of the generating process, adds L2 columns

    Returns:
        DataFrame with one row per split
    """
    fit_cfg = fit_cfg or FitConfig()
    eval_cfg = eval_cfg or EvalConfig()
    support = eval_cfg.support[1]
    rows = []
    for index in range(eval_cfg.n_splits):
        train, test = split(sequence, eval_cfg.seed + index)
        result = fit(train, kernel_cfg=kernel_cfg, cfg=fit_cfg)
        mu_pred = background_mode(result.state)
        phi_pred = mode_function(result, support)
        row = {'split': index, 'n_train': len(train), 'n_test': len(test),
               'hll': hll(test, mu_pred, phi_pred, support=support),
               'mu_mode': mu_pred, 'bound': result.report.final_bound,
               'iterations': result.report.iterations}
        if truth is not None:
            mu_true, phi_true = truth
            row['l2_mu'] = l2_mu(mu_pred, mu_true)
            row['l2_phi'] = l2_phi(phi_pred, phi_true, eval_cfg.support, eval_cfg.quadrature_points)
        rows.append(row)
        logging.info(f"Split {index}: n_train={len(train)}, n_test={len(test)}, hll={row['hll']}")
    return pd.DataFrame(rows)


@dataclass
class BenchmarkResult:
    table: pd.DataFrame
    slope: float
    correlation: float


def benchmark_fit_time(sizes: Sequence[int], seed: int = 0, mu: float = 10.0, num_inducing: int = 10,
                       iterations: int = 5, support: float = 1.0, kernel_cfg: Optional[KernelConfig] = None
                       ) -> BenchmarkResult:
    """
    Per-iteration fit time against sequence length with support truncation on

    Each size N gets a sequence from the exponential kernel scaled to branching
    ratio 0.5 on a window of length N / (2 μ), which holds about N events.
    """
    if len(sizes) < 2:
        raise ArgumentError("Benchmark needs at least two sizes")
    kernel = get_kernel('exp').scaled(0.5)
    kernel_cfg = kernel_cfg or KernelConfig(gamma=1.0, alphas=[0.1])
    fit_cfg = FitConfig(max_em_iterations=iterations, elbo_relative_tolerance=1e-12, num_inducing=num_inducing,
                        support=support, grid_over_support=True)
    GTildeTable.default()

    rows = []
    for size in sizes:
        t_max = size / (2.0 * mu)
        events = simulate(SimConfig(mu=mu, kernel=kernel, t_max=t_max, seed=seed, record_branching=False)).events
        started = time.perf_counter()
        result = fit(events, kernel_cfg=kernel_cfg, cfg=fit_cfg)
        total = time.perf_counter() - started
        rows.append({'size': int(size), 'n_events': len(events), 't_max': t_max,
                     'iterations': result.report.iterations,
                     'seconds_per_iteration': result.report.mean_iteration_seconds,
                     'total_seconds': total})
        logging.info(f"Benchmark N={size}: {len(events)} events, "
                     f"{result.report.mean_iteration_seconds:.4f}s per iteration")

    table = pd.DataFrame(rows)
    log_n = np.log(table['n_events'].to_numpy(float))
    log_t = np.log(table['seconds_per_iteration'].to_numpy(float))
    slope = float(np.polyfit(log_n, log_t, 1)[0])
    correlation = float(np.corrcoef(log_n, log_t)[0, 1])
    return BenchmarkResult(table=table, slope=slope, correlation=correlation)


def benchmark_inducing(num_inducing: Sequence[int], n_events: int = 1000, seed: int = 0, mu: float = 10.0,
                       max_iterations: int = 50, tolerance: float = 1e-5, support: float = 1.0,
                       kernel_cfg: Optional[KernelConfig] = None) -> pd.DataFrame:
    """
    Fit time and convergence against the number of inducing points

    Every M fits the same sequence (exponential kernel at branching ratio 0.5,
    about ``n_events`` events) and runs EM to convergence or ``max_iterations``.

    Returns:
        DataFrame with num_inducing, n_events, iterations, converged,
        seconds_per_iteration, total_seconds and bound per row
    """
    if not num_inducing:
        raise ArgumentError("Benchmark needs at least one inducing-point count")
    kernel = get_kernel('exp').scaled(0.5)
    kernel_cfg = kernel_cfg or KernelConfig(gamma=1.0, alphas=[0.1])
    t_max = n_events / (2.0 * mu)
    events = simulate(SimConfig(mu=mu, kernel=kernel, t_max=t_max, seed=seed, record_branching=False)).events
    GTildeTable.default()

    rows = []
    for m in num_inducing:
        fit_cfg = FitConfig(max_em_iterations=max_iterations, elbo_relative_tolerance=tolerance,
                            num_inducing=int(m), support=support, grid_over_support=True)
        started = time.perf_counter()
        result = fit(events, kernel_cfg=kernel_cfg, cfg=fit_cfg)
        total = time.perf_counter() - started
        report = result.report
        rows.append({'num_inducing': int(m), 'n_events': len(events), 'iterations': report.iterations,
                     'converged': report.converged, 'seconds_per_iteration': report.mean_iteration_seconds,
                     'total_seconds': total, 'bound': report.final_bound})
        logging.info(f"Benchmark M={m}: {report.iterations} iterations "
                     f"({'converged' if report.converged else 'not converged'}), "
                     f"{report.mean_iteration_seconds:.4f}s per iteration")
    return pd.DataFrame(rows)
