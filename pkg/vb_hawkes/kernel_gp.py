"""
Sparse GP machinery for the triggering kernel: ARD kernel, inducing grid,
Cholesky-backed Gram algebra, posterior moments and the Ψ integrals.
"""

import logging
from dataclasses import dataclass, field
from threading import Lock
from typing import Optional, Tuple

import numpy as np
from cachetools import LRUCache, cached
from scipy import linalg
from scipy.special import erf

from .errors import ArgumentError, NumericalFailure, StateError
from .models import Domain, KernelConfig

# Entries per chunk when accumulating Ψ over many events in R > 1
_PSI_CHUNK_ENTRIES = 2_000_000


def _as_points(x, dim: int) -> np.ndarray:
    """Coerce a point or a batch of points to shape (n, dim)"""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1) if dim == 1 else arr.reshape(1, -1)
    if arr.shape[1] != dim:
        raise ArgumentError(f"Expected points of dimension {dim}, got {arr.shape[1]}")
    return arr


def kernel(x, x_prime, cfg: KernelConfig) -> float:
    """γ Π_r exp(-(x_r - x'_r)^2 / (2 α_r)) for a single pair of points"""
    a = np.atleast_1d(np.asarray(x, dtype=float))
    b = np.atleast_1d(np.asarray(x_prime, dtype=float))
    if a.shape != b.shape or a.size != cfg.dim:
        raise ArgumentError(f"Kernel arguments must both have dimension {cfg.dim}")
    alphas = np.asarray(cfg.alphas)
    return float(cfg.gamma * np.exp(-np.sum((a - b) ** 2 / (2.0 * alphas))))


def gram(x, y, cfg: KernelConfig) -> np.ndarray:
    """Cross-covariance matrix K(x_a, y_b) for two batches of points"""
    xa = _as_points(x, cfg.dim)
    yb = _as_points(y, cfg.dim)
    alphas = np.asarray(cfg.alphas)
    sq = ((xa[:, None, :] - yb[None, :, :]) ** 2 / (2.0 * alphas)).sum(axis=-1)
    return cfg.gamma * np.exp(-sq)


@dataclass(frozen=True)
class InducingGrid:
    """Inducing locations on a regular lattice, shape (M, R)"""
    points: np.ndarray
    shape: Tuple[int, ...]

    @classmethod
    def regular(cls, domain: Domain, per_dim: int) -> 'InducingGrid':
        """Uniform lattice including both endpoints of every dimension"""
        if per_dim < 2:
            raise ArgumentError("An inducing grid needs at least two points per dimension")
        axes = [np.linspace(lo, hi, per_dim) for lo, hi in zip(domain.lower, domain.upper)]
        mesh = np.meshgrid(*axes, indexing='ij')
        points = np.stack([m.ravel() for m in mesh], axis=-1)
        return cls(points=points, shape=(per_dim,) * domain.dim)

    @classmethod
    def from_points(cls, points) -> 'InducingGrid':
        arr = np.asarray(points, dtype=float)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        if arr.shape[0] < 2:
            raise ArgumentError("An inducing grid needs at least two points")
        return cls(points=arr, shape=(arr.shape[0],))

    @property
    def size(self) -> int:
        return int(self.points.shape[0])

    @property
    def dim(self) -> int:
        return int(self.points.shape[1])

    def key(self) -> bytes:
        return self.points.tobytes()


@dataclass(frozen=True)
class GramFactor:
    """K_zz with jitter, its lower Cholesky factor and log-determinant"""
    matrix: np.ndarray
    lower: np.ndarray
    logdet: float

    @classmethod
    def build(cls, grid: InducingGrid, cfg: KernelConfig) -> 'GramFactor':
        if grid.dim != cfg.dim:
            raise ArgumentError(f"Grid dimension {grid.dim} does not match kernel dimension {cfg.dim}")
        k_zz = gram(grid.points, grid.points, cfg) + cfg.jitter * np.eye(grid.size)
        try:
            lower = linalg.cholesky(k_zz, lower=True)
        except linalg.LinAlgError as e:
            raise StateError(f"Gram matrix is not positive definite (gamma={cfg.gamma}, alphas={cfg.alphas})") from e
        logdet = 2.0 * float(np.sum(np.log(np.diag(lower))))
        return cls(matrix=k_zz, lower=lower, logdet=logdet)

    @property
    def size(self) -> int:
        return int(self.matrix.shape[0])

    def solve(self, b: np.ndarray) -> np.ndarray:
        """K_zz^{-1} b"""
        return linalg.cho_solve((self.lower, True), b)

    def half_solve(self, b: np.ndarray) -> np.ndarray:
        """L^{-1} b with K_zz = L L^T"""
        return linalg.solve_triangular(self.lower, b, lower=True)

    def inverse(self) -> np.ndarray:
        return self.solve(np.eye(self.size))


_factor_cache = LRUCache(maxsize=128)
_factor_lock = Lock()


@cached(_factor_cache, key=lambda grid, cfg: (grid.key(), cfg.key()), lock=_factor_lock)
def gram_factor(grid: InducingGrid, cfg: KernelConfig) -> GramFactor:
    """Memoised GramFactor.build, keyed by grid locations and hyperparameters"""
    logging.debug(f"Factorising Gram matrix for M={grid.size}, gamma={cfg.gamma}, alphas={cfg.alphas}")
    return GramFactor.build(grid, cfg)


def check_factor(s_factor: np.ndarray) -> np.ndarray:
    s_factor = np.asarray(s_factor, dtype=float)
    if s_factor.ndim != 2 or s_factor.shape[0] != s_factor.shape[1]:
        raise StateError("Covariance factor must be a square matrix")
    if not np.all(np.isfinite(s_factor)) or np.any(np.diag(s_factor) <= 0):
        raise StateError("Covariance factor must be lower triangular with a positive diagonal")
    return np.tril(s_factor)


def posterior_moments(x, m: np.ndarray, s_factor: np.ndarray, grid: InducingGrid,
                      factor: GramFactor, cfg: KernelConfig):
    """
    Mean ν(x) and variance Σ(x, x) of the sparse GP posterior

    Args:
        x: Single point or batch of points
        m: Variational mean of the inducing values
        s_factor: Lower-triangular factor of the variational covariance S
        grid: Inducing locations
        factor: Gram factor of K_zz
        cfg: Kernel hyperparameters

    Returns:
        Tuple (mean, variance); floats for a single point, arrays for a batch
    """
    single = np.ndim(x) == 0 or (np.ndim(x) == 1 and cfg.dim > 1)
    s_factor = check_factor(s_factor)
    k_zx = gram(grid.points, x, cfg)
    v = factor.half_solve(k_zx)
    a = linalg.solve_triangular(factor.lower.T, v, lower=False)
    mean = a.T @ np.asarray(m, dtype=float)
    variance = cfg.gamma - np.sum(v ** 2, axis=0) + np.sum((s_factor.T @ a) ** 2, axis=0)
    if single:
        return float(mean[0]), float(variance[0])
    return mean, variance


def integration_limits(x_i, domain: Domain, support: Optional[float] = None) -> np.ndarray:
    """
    Upper lag limits of the region T_i over which an event's offspring integral runs

    Per dimension the limit is T_max - x_i, shortened to ``support`` when
    truncation is active. Rows are events, columns dimensions.
    """
    points = _as_points(x_i, domain.dim)
    lower = np.asarray(domain.lower)
    upper = np.asarray(domain.upper)
    if np.any(points < lower) or np.any(points > upper):
        raise ArgumentError("Event lies outside the observation domain")
    limits = upper - points
    if support is not None:
        limits = np.minimum(limits, support)
    return limits


def _psi_axis_factor(limits: np.ndarray, z: np.ndarray, alpha: float) -> np.ndarray:
    """
    One dimension's contribution to Ψ for a batch of upper limits

    Returns shape (n, M, M): exp(-(z - z')^2 / (4α)) (√(πα) / 2) [erf((u - z̄)/√α) - erf(-z̄/√α)]
    """
    root = np.sqrt(alpha)
    z_bar = 0.5 * (z[:, None] + z[None, :])
    spread = np.exp(-(z[:, None] - z[None, :]) ** 2 / (4.0 * alpha)) * (0.5 * np.sqrt(np.pi) * root)
    span = erf((limits[:, None, None] - z_bar[None]) / root) - erf(-z_bar / root)[None]
    return spread[None] * span


def psi_matrix(x_i, grid: InducingGrid, cfg: KernelConfig, domain: Domain,
               support: Optional[float] = None) -> np.ndarray:
    """Ψ_i(z, z') = ∫_{T_i} K(z, x) K(x, z') dx for a single event"""
    limits = integration_limits(x_i, domain, support)
    if limits.shape[0] != 1:
        raise ArgumentError("psi_matrix takes a single event; use psi_sum for batches")
    return psi_sum(limits, grid, cfg)


def psi_sum(limits: np.ndarray, grid: InducingGrid, cfg: KernelConfig) -> np.ndarray:
    """Σ_i Ψ_i for events given by their upper lag limits (n, R)"""
    limits = np.asarray(limits, dtype=float).reshape(-1, cfg.dim)
    m = grid.size
    total = np.zeros((m, m))
    if limits.shape[0] == 0:
        return total
    if cfg.dim == 1:
        # Ψ is linear in the erf difference, so the event sum moves inside
        z = grid.points[:, 0]
        alpha = cfg.alphas[0]
        root = np.sqrt(alpha)
        z_bar = 0.5 * (z[:, None] + z[None, :])
        spread = np.exp(-(z[:, None] - z[None, :]) ** 2 / (4.0 * alpha)) * (0.5 * np.sqrt(np.pi) * root)
        u = limits[:, 0]
        span = np.zeros((m, m))
        for start in range(0, u.size, max(1, _PSI_CHUNK_ENTRIES // (m * m))):
            chunk = u[start:start + max(1, _PSI_CHUNK_ENTRIES // (m * m))]
            span += np.sum(erf((chunk[:, None, None] - z_bar[None]) / root), axis=0)
        span -= u.size * erf(-z_bar / root)
        total = cfg.gamma ** 2 * spread * span
    else:
        step = max(1, _PSI_CHUNK_ENTRIES // (m * m))
        for start in range(0, limits.shape[0], step):
            chunk = limits[start:start + step]
            prod = np.ones((chunk.shape[0], m, m))
            for r in range(cfg.dim):
                prod *= _psi_axis_factor(chunk[:, r], grid.points[:, r], cfg.alphas[r])
            total += prod.sum(axis=0)
        total *= cfg.gamma ** 2
    return 0.5 * (total + total.T)


def second_moment_weight(m: np.ndarray, s_factor: np.ndarray, factor: GramFactor) -> np.ndarray:
    """K^{-1}(m m^T + S - K)K^{-1}, the matrix paired with Ψ in ∫ E[f^2]"""
    s = s_factor @ s_factor.T
    inner = np.outer(m, m) + s - factor.matrix
    left = factor.solve(inner)
    return factor.solve(left.T).T


def expected_square_integral(x_i, m: np.ndarray, s_factor: np.ndarray, grid: InducingGrid,
                             factor: GramFactor, cfg: KernelConfig, domain: Domain,
                             support: Optional[float] = None) -> float:
    """
    ∫_{T_i} E[f(x)^2] dx = γ|T_i| + <K^{-1}(m m^T + S - K)K^{-1}, Ψ_i>

    Raises:
        NumericalFailure: if the result is clearly negative
    """
    s_factor = check_factor(s_factor)
    limits = integration_limits(x_i, domain, support)
    volume = float(np.prod(limits))
    psi = psi_sum(limits, grid, cfg)
    value = cfg.gamma * volume + float(np.sum(second_moment_weight(m, s_factor, factor) * psi))
    if value < -1e-8:
        raise NumericalFailure(f"Negative expected square integral {value}: Gram factorisation is unreliable")
    return max(value, 0.0)


@dataclass
class GPContext:
    """
    Everything the engine needs about the GP prior for one fit

    Bundles the kernel hyperparameters, the inducing grid over the lag domain,
    the Gram factor and the truncation length.
    """
    cfg: KernelConfig
    grid: InducingGrid
    factor: GramFactor
    domain: Domain
    support: Optional[float] = None
    lag_domain: Domain = field(default=None)

    @classmethod
    def build(cls, domain: Domain, cfg: KernelConfig, per_dim: int,
              support: Optional[float] = None, grid_over_support: bool = False) -> 'GPContext':
        if domain.dim != cfg.dim:
            raise ArgumentError(f"Kernel has {cfg.dim} length-scales but the domain has {domain.dim} dimensions")
        span = support if grid_over_support else None
        lag_domain = domain.lag_domain(span)
        grid = InducingGrid.regular(lag_domain, per_dim)
        return cls(cfg=cfg, grid=grid, factor=gram_factor(grid, cfg), domain=domain,
                   support=support, lag_domain=lag_domain)

    @classmethod
    def from_grid(cls, domain: Domain, cfg: KernelConfig, grid: InducingGrid,
                  support: Optional[float] = None) -> 'GPContext':
        upper = [float(v) for v in grid.points.max(axis=0)]
        return cls(cfg=cfg, grid=grid, factor=gram_factor(grid, cfg), domain=domain, support=support,
                   lag_domain=Domain(lower=[0.0] * cfg.dim, upper=upper))

    def moments(self, lags, m: np.ndarray, s_factor: np.ndarray):
        return posterior_moments(lags, m, s_factor, self.grid, self.factor, self.cfg)

    def projection(self, lags) -> Tuple[np.ndarray, np.ndarray]:
        """
        Fixed parts of the posterior at the given lags

        Returns:
            Tuple (A, prior_var) with A = K^{-1} k_z(lags), shape (M, n), and
            prior_var = γ - k^T K^{-1} k, so that ν = A^T m and
            Σ = prior_var + ||S_factor^T A||^2 column-wise
        """
        lags = _as_points(lags, self.cfg.dim)
        if lags.shape[0] == 0:
            return np.zeros((self.grid.size, 0)), np.zeros(0)
        k_zx = gram(self.grid.points, lags, self.cfg)
        v = self.factor.half_solve(k_zx)
        a = linalg.solve_triangular(self.factor.lower.T, v, lower=False)
        prior_var = self.cfg.gamma - np.sum(v ** 2, axis=0)
        return a, prior_var
