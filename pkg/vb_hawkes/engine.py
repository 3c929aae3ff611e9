"""
Variational EM for a Hawkes process whose triggering kernel is the square of a
sparse Gaussian process.

The branching posterior is stored sparsely as (child, parent) pairs restricted
to lags inside the support, which keeps one EM iteration linear in the number
of events when truncation is active.
"""

import time
import logging
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np
import pandas as pd
from scipy import linalg, optimize, stats
from scipy.special import entr

from .errors import ArgumentError, DomainError, NumericalFailure, StateError
from .kernel_gp import GPContext, GramFactor, check_factor, integration_limits, psi_sum, second_moment_weight
from .models import EventSequence, FitConfig, FitReport, KernelConfig, Priors
from .special_functions import digamma, expected_log_square, expected_log_square_with_grad, log_gamma, trigamma

# q entries below this are treated as exact zeros
PROBABILITY_FLOOR = 1e-300


@dataclass
class BranchingPosterior:
    """
    Parent probabilities of every event

    ``background[i]`` is q_{i,0}. ``probs[p]`` is the probability that event
    ``children[p]`` was triggered by event ``parents[p]``. Pairs outside the
    support are absent and carry probability zero.
    """
    background: np.ndarray
    children: np.ndarray
    parents: np.ndarray
    probs: np.ndarray

    @property
    def n_events(self) -> int:
        return int(self.background.size)

    def row_sums(self) -> np.ndarray:
        return self.background + np.bincount(self.children, weights=self.probs, minlength=self.n_events)

    def entropy(self) -> float:
        """H_B = -Σ q log q with 0 log 0 = 0"""
        return float(entr(self.background).sum() + entr(self.probs).sum())

    def dense(self) -> np.ndarray:
        """(N, N + 1) matrix; column 0 is the background, column j + 1 is event j"""
        out = np.zeros((self.n_events, self.n_events + 1))
        out[:, 0] = self.background
        out[self.children, self.parents + 1] = self.probs
        return out


def branching_from_log_weights(background_log_weight: float, children: np.ndarray, parents: np.ndarray,
                               pair_log_weights: np.ndarray, n_events: int) -> BranchingPosterior:
    """
    Normalise unnormalised log weights row by row

    Args:
        background_log_weight: log of the background numerator, shared by every row
        children: Child index of each candidate pair
        parents: Parent index of each candidate pair
        pair_log_weights: log numerator of each pair, -inf excludes the pair
        n_events: Number of rows

    Returns:
        BranchingPosterior whose rows sum to one
    """
    children = np.asarray(children, dtype=np.int64)
    parents = np.asarray(parents, dtype=np.int64)
    pair_log_weights = np.asarray(pair_log_weights, dtype=float)

    row_max = np.full(n_events, float(background_log_weight))
    np.maximum.at(row_max, children, pair_log_weights)
    background = np.exp(background_log_weight - row_max)
    pair = np.exp(pair_log_weights - row_max[children])
    norm = background + np.bincount(children, weights=pair, minlength=n_events)

    background = background / norm
    pair = pair / norm[children]
    background[background < PROBABILITY_FLOOR] = 0.0
    pair[pair < PROBABILITY_FLOOR] = 0.0
    return BranchingPosterior(background=background, children=children, parents=parents, probs=pair)


def candidate_pairs(times: np.ndarray, support: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    All (child, parent) index pairs with parent < child and lag inside the support

    Returns:
        Tuple (children, parents), grouped by child in increasing order
    """
    times = np.asarray(times, dtype=float)
    n = times.size
    if support is None:
        start = np.zeros(n, dtype=np.int64)
    else:
        start = np.searchsorted(times, times - support, side='left').astype(np.int64)
    counts = np.arange(n, dtype=np.int64) - start
    children = np.repeat(np.arange(n, dtype=np.int64), counts)
    offsets = np.arange(children.size, dtype=np.int64) - np.repeat(np.cumsum(counts) - counts, counts)
    parents = np.repeat(start, counts) + offsets
    return children, parents


@dataclass
class VariationalState:
    """q(u) = Normal(m, S_factor S_factor^T), q(μ) = Gamma(k, c) and the branching posterior"""
    m: np.ndarray
    s_factor: np.ndarray
    k: float
    c: float
    branching: Optional[BranchingPosterior] = None

    def __post_init__(self):
        self.m = np.asarray(self.m, dtype=float)
        self.s_factor = np.asarray(self.s_factor, dtype=float)
        if self.k <= 0 or self.c <= 0:
            raise StateError(f"Gamma parameters must be positive, got k={self.k}, c={self.c}")

    @property
    def s(self) -> np.ndarray:
        return self.s_factor @ self.s_factor.T

    @property
    def background_mean(self) -> float:
        return self.k * self.c

    def copy(self) -> 'VariationalState':
        return replace(self, m=self.m.copy(), s_factor=self.s_factor.copy())


@dataclass
class MStepResult:
    state: VariationalState
    stalled: bool = False
    value: float = float('nan')


@dataclass
class FitResult:
    state: VariationalState
    report: FitReport
    gp: GPContext
    priors: Priors
    cfg: Optional[FitConfig] = None

    def __iter__(self):
        # unpacks as (state, report)
        return iter((self.state, self.report))


def kl_gamma(k: float, c: float, k0: float, c0: float) -> float:
    """KL(Gamma(k, c) || Gamma(k0, c0)) with shape/scale parameterisation"""
    if min(k, c, k0, c0) <= 0:
        raise DomainError(f"Gamma parameters must be positive, got ({k}, {c}) and ({k0}, {c0})")
    value = ((k - k0) * digamma(k) - k0 * np.log(c / c0) - k
             - log_gamma(k) + log_gamma(k0) + c * k / c0)
    return float(value)


def kl_gaussian_u(m: np.ndarray, s_factor: np.ndarray, factor: GramFactor) -> float:
    """KL(Normal(m, S) || Normal(0, K_zz)) with S = s_factor s_factor^T"""
    s_factor = check_factor(s_factor)
    m = np.asarray(m, dtype=float)
    trace = float(np.sum(factor.half_solve(s_factor) ** 2))
    mahalanobis = float(np.sum(factor.half_solve(m) ** 2))
    logdet_s = 2.0 * float(np.sum(np.log(np.diag(s_factor))))
    return 0.5 * (trace + factor.logdet - logdet_s - factor.size + mahalanobis)


class HawkesObjective:
    """
    The ELBO of one event sequence under fixed kernel hyperparameters

    Holds everything that does not change during a fit: candidate pairs, their
    projections onto the inducing grid and the summed Ψ matrix.
    """

    def __init__(self, events: EventSequence, priors: Priors, gp: GPContext):
        if gp.cfg.dim != 1:
            raise ArgumentError("Event sequences are one-dimensional; the kernel must have a single length-scale")
        self.events = events
        self.priors = priors
        self.gp = gp
        self.volume = events.duration
        domain = events.domain

        self.children, self.parents = candidate_pairs(events.times, gp.support)
        self.lags = events.times[self.children] - events.times[self.parents]
        self.projection, self.prior_var = gp.projection(self.lags.reshape(-1, 1))

        limits = integration_limits(events.times.reshape(-1, 1), domain, gp.support) if len(events) else np.zeros((0, 1))
        self.volume_sum = float(np.sum(np.prod(limits, axis=1)))
        self.psi_bar = psi_sum(limits, gp.grid, gp.cfg)

        factor = gp.factor
        self.k_inv = factor.inverse()
        self.k_inv = 0.5 * (self.k_inv + self.k_inv.T)
        self.p_matrix = factor.solve(factor.solve(self.psi_bar).T).T
        self.p_matrix = 0.5 * (self.p_matrix + self.p_matrix.T)
        self.tril = np.tril_indices(factor.size)
        self._diag_mask = self.tril[0] == self.tril[1]

        logging.debug(f"Objective over {len(events)} events with {self.children.size} candidate pairs")

    @property
    def n_events(self) -> int:
        return len(self.events)

    def pair_moments(self, m: np.ndarray, s_factor: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Posterior mean and variance of f at every candidate lag"""
        mean = self.projection.T @ m
        spread = s_factor.T @ self.projection
        return mean, self.prior_var + np.sum(spread ** 2, axis=0)

    def uniform_branching(self) -> BranchingPosterior:
        log_weights = np.zeros(self.children.size)
        return branching_from_log_weights(0.0, self.children, self.parents, log_weights, self.n_events)

    def e_step(self, state: VariationalState) -> BranchingPosterior:
        """q_{i,0} ∝ c exp(ψ(k)), q_{i,j} ∝ exp(E[log f(x_i - x_j)^2])"""
        mean, variance = self.pair_moments(state.m, check_factor(state.s_factor))
        pair_log_weights = np.asarray(expected_log_square(mean, variance)) if mean.size else np.zeros(0)
        background_log_weight = float(np.log(state.c) + digamma(state.k))
        return branching_from_log_weights(background_log_weight, self.children, self.parents,
                                          pair_log_weights, self.n_events)

    def expected_square_total(self, m: np.ndarray, s_factor: np.ndarray) -> float:
        """Σ_i ∫_{T_i} E[f^2]"""
        value = self.gp.cfg.gamma * self.volume_sum + float(
            np.sum(second_moment_weight(m, s_factor, self.gp.factor) * self.psi_bar))
        if value < -1e-8 * max(1.0, self.gp.cfg.gamma * self.volume_sum):
            raise NumericalFailure(f"Negative expected square integral {value}")
        return value

    def dde(self, state: VariationalState, branching: Optional[BranchingPosterior] = None) -> float:
        """
        Data-dependent expectation of the ELBO, which is also the tighter
        approximation to the log marginal likelihood
        """
        q = branching if branching is not None else state.branching
        if q is None:
            raise StateError("Branching posterior has not been computed; run the E-step first")
        s_factor = check_factor(state.s_factor)
        background_term = float(q.background.sum()) * (float(digamma(state.k)) + np.log(state.c))
        if q.probs.size:
            mean, variance = self.pair_moments(state.m, s_factor)
            pair_term = float(q.probs @ np.asarray(expected_log_square(mean, variance)))
        else:
            pair_term = 0.0
        integral = self.expected_square_total(state.m, s_factor)
        return background_term + pair_term - integral + q.entropy() - state.k * state.c * self.volume

    def kl_terms(self, state: VariationalState) -> Tuple[float, float]:
        return (kl_gamma(state.k, state.c, self.priors.k0, self.priors.c0),
                kl_gaussian_u(state.m, state.s_factor, self.gp.factor))

    def elbo(self, state: VariationalState, branching: Optional[BranchingPosterior] = None) -> float:
        kl_g, kl_u = self.kl_terms(state)
        return self.dde(state, branching) - kl_g - kl_u

    # Unconstrained parameterisation: m, tril(S_factor) with log diagonal, log k, log c

    def pack(self, state: VariationalState) -> np.ndarray:
        entries = np.tril(state.s_factor)[self.tril].copy()
        entries[self._diag_mask] = np.log(entries[self._diag_mask])
        return np.concatenate([state.m, entries, [np.log(state.k), np.log(state.c)]])

    def unpack(self, theta: np.ndarray, branching: Optional[BranchingPosterior] = None) -> VariationalState:
        size = self.gp.factor.size
        m = theta[:size].copy()
        entries = theta[size:-2].copy()
        entries[self._diag_mask] = np.exp(entries[self._diag_mask])
        s_factor = np.zeros((size, size))
        s_factor[self.tril] = entries
        return VariationalState(m=m, s_factor=s_factor, k=float(np.exp(theta[-2])),
                                c=float(np.exp(theta[-1])), branching=branching)

    def value_and_gradient(self, theta: np.ndarray, branching: BranchingPosterior) -> Tuple[float, np.ndarray]:
        """ELBO at the unconstrained point theta for fixed q, and its gradient"""
        state = self.unpack(theta, branching)
        m, lower, k, c = state.m, state.s_factor, state.k, state.c
        priors = self.priors
        q0 = float(branching.background.sum())

        if branching.probs.size:
            mean, variance = self.pair_moments(m, lower)
            e_log, d_mean, d_var = expected_log_square_with_grad(mean, variance)
            pair_term = float(branching.probs @ e_log)
            grad_m = self.projection @ (branching.probs * d_mean)
            grad_s = (self.projection * (branching.probs * d_var)) @ self.projection.T
        else:
            pair_term = 0.0
            grad_m = np.zeros_like(m)
            grad_s = np.zeros((m.size, m.size))

        value = (q0 * (float(digamma(k)) + np.log(c)) + pair_term - self.expected_square_total(m, lower)
                 + branching.entropy() - k * c * self.volume
                 - kl_gamma(k, c, priors.k0, priors.c0) - kl_gaussian_u(m, lower, self.gp.factor))

        grad_m = grad_m - 2.0 * self.p_matrix @ m - self.k_inv @ m
        grad_s = grad_s - self.p_matrix - 0.5 * self.k_inv
        grad_lower = np.tril(2.0 * grad_s @ lower)
        grad_lower[np.diag_indices_from(grad_lower)] += 1.0 / np.diag(lower)
        grad_entries = grad_lower[self.tril]
        grad_entries[self._diag_mask] *= np.diag(lower)

        window = self.volume + 1.0 / priors.c0
        grad_k = (q0 + priors.k0 - k) * float(trigamma(k)) + 1.0 - c * window
        grad_c = (q0 + priors.k0) / c - k * window

        gradient = np.concatenate([grad_m, grad_entries, [k * grad_k, c * grad_c]])
        return float(value), gradient

    def background_update(self, state: VariationalState) -> VariationalState:
        """Closed-form maximiser of the ELBO in (k, c) for fixed q"""
        q0 = float(state.branching.background.sum())
        return replace(state, k=self.priors.k0 + q0, c=1.0 / (self.volume + 1.0 / self.priors.c0))

    def m_step(self, state: VariationalState, cfg: FitConfig) -> MStepResult:
        """
        Increase the ELBO in (m, S, k, c) with q held fixed

        The input state is returned unchanged, flagged as stalled, when no
        improving step is found.
        """
        if state.branching is None:
            raise StateError("m_step needs the branching posterior from the E-step")
        branching = state.branching
        start = state
        start_value = self.elbo(start)

        if cfg.closed_form_background:
            candidate = self.background_update(state)
            candidate_value = self.elbo(candidate)
            if candidate_value >= start_value:
                state, start_value = candidate, candidate_value

        theta0 = self.pack(state)
        value0, grad0 = self.value_and_gradient(theta0, branching)
        if np.linalg.norm(grad0) < cfg.gradient_tolerance:
            return MStepResult(state=state, stalled=False, value=value0)

        if cfg.m_step_method == 'lbfgs':
            theta, value = self._lbfgs(theta0, branching, cfg)
        else:
            theta, value = self._gradient_ascent(theta0, value0, grad0, branching, cfg)

        if theta is None or not np.isfinite(value) or value < value0:
            logging.debug(f"M-step made no progress from ELBO {value0:.8f}")
            return MStepResult(state=state, stalled=True, value=value0)
        return MStepResult(state=self.unpack(theta, branching), stalled=False, value=value)

    def _safe_objective(self, theta: np.ndarray, branching: BranchingPosterior) -> Tuple[float, np.ndarray]:
        try:
            with np.errstate(over='raise', invalid='raise'):
                value, gradient = self.value_and_gradient(theta, branching)
        except (DomainError, StateError, NumericalFailure, FloatingPointError, linalg.LinAlgError):
            return -np.inf, np.zeros_like(theta)
        if not np.isfinite(value) or not np.all(np.isfinite(gradient)):
            return -np.inf, np.zeros_like(theta)
        return value, gradient

    def _lbfgs(self, theta0: np.ndarray, branching: BranchingPosterior, cfg: FitConfig):
        def negative(theta):
            value, gradient = self._safe_objective(theta, branching)
            if not np.isfinite(value):
                return np.inf, np.zeros_like(theta)
            return -value, -gradient

        result = optimize.minimize(negative, theta0, jac=True, method='L-BFGS-B',
                                   options={'maxiter': cfg.m_step_iterations})
        value, _ = self._safe_objective(result.x, branching)
        logging.debug(f"L-BFGS-B: {result.nit} iterations, status {result.status} ({result.message})")
        return result.x, value

    def _gradient_ascent(self, theta: np.ndarray, value: float, gradient: np.ndarray,
                         branching: BranchingPosterior, cfg: FitConfig):
        """Steepest ascent with Armijo backtracking"""
        step = cfg.initial_step
        moved = False
        for _ in range(cfg.m_step_iterations):
            slope = float(gradient @ gradient)
            if np.sqrt(slope) < cfg.gradient_tolerance:
                break
            for _ in range(cfg.max_backtracks):
                trial = theta + step * gradient
                trial_value, trial_gradient = self._safe_objective(trial, branching)
                if np.isfinite(trial_value) and trial_value >= value + 1e-4 * step * slope:
                    break
                step *= 0.5
            else:
                logging.debug(f"Line search exhausted {cfg.max_backtracks} backtracks")
                break
            theta, value, gradient = trial, trial_value, trial_gradient
            moved = True
            step *= 2.0
        return (theta, value) if moved else (None, value)

    def initial_state(self, cfg: FitConfig) -> VariationalState:
        """
        Start from q(u) with the prior covariance and q(μ) equal to the prior

        With ``init_mean='rate'`` the mean is a constant √(0.5 / span), which
        puts about half of the events on offspring; ``'prior'`` uses m = 0.
        """
        size = self.gp.factor.size
        if cfg.init_mean == 'rate':
            span = float(np.prod(self.gp.lag_domain.widths))
            m = np.full(size, np.sqrt(0.5 / span))
        else:
            m = np.zeros(size)
        return VariationalState(m=m, s_factor=self.gp.factor.lower.copy(), k=self.priors.k0,
                                c=self.priors.c0, branching=self.uniform_branching())


def _objective(events: EventSequence, gp: GPContext, priors: Optional[Priors] = None) -> HawkesObjective:
    if priors is None:
        priors = Priors.default_for(len(events), events.duration)
    return HawkesObjective(events, priors, gp)


def e_step(events: EventSequence, state: VariationalState, gp: GPContext) -> BranchingPosterior:
    return _objective(events, gp).e_step(state)


def dde(events: EventSequence, state: VariationalState, gp: GPContext) -> float:
    return _objective(events, gp).dde(state)


def approx_log_marginal(events: EventSequence, state: VariationalState, gp: GPContext) -> float:
    """Tighter bound on the log marginal likelihood (the ELBO without its KL terms)"""
    return _objective(events, gp).dde(state)


def elbo(events: EventSequence, state: VariationalState, priors: Priors, gp: GPContext) -> float:
    return _objective(events, gp, priors).elbo(state)


def m_step(events: EventSequence, state: VariationalState, priors: Priors, gp: GPContext,
           cfg: Optional[FitConfig] = None) -> MStepResult:
    return _objective(events, gp, priors).m_step(state, cfg or FitConfig())


def fit(events: EventSequence, priors: Optional[Priors] = None, kernel_cfg: Optional[KernelConfig] = None,
        cfg: Optional[FitConfig] = None, gp: Optional[GPContext] = None, verbose: bool = False) -> FitResult:
    """
    Run variational EM until the relative ELBO change falls below tolerance

    Args:
        events: Sorted event sequence
        priors: Gamma prior on the background rate; defaults from the data
        kernel_cfg: GP hyperparameters, used when ``gp`` is not given
        cfg: EM settings
        gp: Prebuilt GP context (inducing grid, Gram factor, support)
        verbose: Log every iteration at INFO instead of DEBUG

    Returns:
        FitResult with the final state and the per-iteration report
    """
    cfg = cfg or FitConfig()
    if not isinstance(events, EventSequence):
        raise ArgumentError("fit expects an EventSequence")
    if priors is None:
        priors = Priors.default_for(len(events), events.duration)
    if gp is None:
        kernel_cfg = kernel_cfg or KernelConfig()
        gp = GPContext.build(events.domain, kernel_cfg, cfg.num_inducing,
                             support=cfg.resolve_support(events.domain),
                             grid_over_support=cfg.grid_over_support)

    objective = HawkesObjective(events, priors, gp)
    state = objective.initial_state(cfg)
    report = FitReport()
    log = logging.info if verbose else logging.debug
    previous = None

    for iteration in range(1, cfg.max_em_iterations + 1):
        started = time.perf_counter()
        state = replace(state, branching=objective.e_step(state))
        step = objective.m_step(state, cfg)
        state = step.state
        kl_g, kl_u = objective.kl_terms(state)
        bound = objective.dde(state)
        value = bound - kl_g - kl_u
        elapsed = time.perf_counter() - started

        if not np.isfinite(value):
            raise NumericalFailure(f"ELBO became non-finite at iteration {iteration}")

        report.elbo_trace.append(value)
        report.bound_trace.append(bound)
        report.kl_gamma_trace.append(kl_g)
        report.kl_u_trace.append(kl_u)
        report.iteration_seconds.append(elapsed)
        report.m_step_stalls.append(step.stalled)
        report.iterations = iteration
        log(f"Iteration {iteration}: ELBO={value:.6f}, bound={bound:.6f}, time={elapsed:.3f}s"
            + (" (M-step stalled)" if step.stalled else ""))

        if previous is not None and abs(value - previous) <= cfg.elbo_relative_tolerance * abs(value):
            report.converged = True
            break
        previous = value

    report.final_bound = report.bound_trace[-1]
    logging.info(f"Fit finished after {report.iterations} iterations "
                 f"({'converged' if report.converged else 'not converged'}): bound={report.final_bound:.6f}, "
                 f"background mean={state.background_mean:.4f}")
    return FitResult(state=state, report=report, gp=gp, priors=priors, cfg=cfg)


def predictive_kernel(state: VariationalState, gp: GPContext, x_tilde):
    """
    Gamma(shape, scale) moment match of φ(x̃) = f(x̃)^2

    Returns:
        Tuple (shape, scale); floats for a single lag, arrays for a batch
    """
    mean, variance = gp.moments(x_tilde, state.m, state.s_factor)
    mean = np.asarray(mean, dtype=float)
    variance = np.asarray(variance, dtype=float)
    if np.any(variance <= 0):
        raise StateError("Predictive variance must be positive")
    second = mean ** 2 + variance
    spread = 2.0 * variance * (2.0 * mean ** 2 + variance)
    shape = second ** 2 / spread
    scale = spread / second
    if shape.ndim == 0:
        return float(shape), float(scale)
    return shape, scale


def gamma_mode(shape, scale):
    shape = np.asarray(shape, dtype=float)
    out = np.where(shape > 1.0, (shape - 1.0) * scale, 0.0)
    return float(out) if out.ndim == 0 else out


def predictive_mode(state: VariationalState, gp: GPContext, x_tilde):
    """Pointwise mode of the posterior triggering kernel"""
    return gamma_mode(*predictive_kernel(state, gp, x_tilde))


def background_mode(state: VariationalState) -> float:
    return float(gamma_mode(state.k, state.c))


def predictive_table(state: VariationalState, gp: GPContext, lags, interval: Tuple[float, float] = (0.1, 0.9)) -> pd.DataFrame:
    """Mode, median, mean and central credible band of φ at each lag"""
    lags = np.asarray(lags, dtype=float).ravel()
    shape, scale = predictive_kernel(state, gp, lags)
    return pd.DataFrame({
        'lag': lags,
        'mode': gamma_mode(shape, scale),
        'median': stats.gamma.ppf(0.5, shape, scale=scale),
        'mean': shape * scale,
        'lower': stats.gamma.ppf(interval[0], shape, scale=scale),
        'upper': stats.gamma.ppf(interval[1], shape, scale=scale),
        'shape': shape,
        'scale': scale,
    })
