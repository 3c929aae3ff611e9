"""
Scalar special functions needed by the closed-form ELBO.

G̃(z) is the derivative of the confluent hypergeometric function 1F1(a, 1/2, z)
with respect to ``a`` at ``a = 0``. It enters the expectation of log f^2 for a
Gaussian f and is served from a lookup table built once per process.
"""

import math
import logging
from threading import Lock
from typing import ClassVar, Optional, Union

import numpy as np
from scipy import special, integrate, interpolate, stats

from .errors import DomainError

EULER_GAMMA = float(np.euler_gamma)

ArrayLike = Union[float, np.ndarray]

# |z| above this makes the alternating series lose too many digits in float64
_DIRECT_SERIES_LIMIT = 20.0


def _as_output(values: np.ndarray, scalar: bool) -> ArrayLike:
    return float(values) if scalar else values


def _check_non_positive(z: np.ndarray, name: str = "z"):
    if not np.all(z <= 0):
        raise DomainError(f"{name} must be non-positive (got max {np.nanmax(z) if z.size else z})")


def _check_positive(x: np.ndarray, name: str = "x"):
    if not np.all(x > 0):
        raise DomainError(f"{name} must be positive")


def _g_tilde_prime_exact(w: np.ndarray) -> np.ndarray:
    """G̃'(z) at z = -w through Dawson's integral: 2 D(sqrt(w)) / sqrt(w)"""
    root = np.sqrt(w)
    safe = np.where(root > 0, root, 1.0)
    return np.where(root > 0, 2.0 * special.dawsn(safe) / safe, 2.0)


def g_tilde_series(z: float) -> float:
    """
    Reference evaluation of G̃(z), used to build and check the lookup table

    For |z| <= 20 sums the defining series sum_{n>=1} z^n / (n (1/2)_n) with Kahan
    compensation. Further out the alternating terms cancel catastrophically, so
    the Kummer-transformed form -E_{n ~ Poisson(-z)}[psi(n + 1/2) - psi(1/2)]
    (all terms of one sign) is summed instead.

    Args:
        z: Non-positive argument

    Returns:
        G̃(z)
    """
    z = float(z)
    if not z <= 0:
        raise DomainError(f"G̃ is tabulated for non-positive arguments only, got {z}")
    if z == 0:
        return 0.0

    if z >= -_DIRECT_SERIES_LIMIT:
        total = 0.0
        compensation = 0.0
        ratio = 1.0
        n = 0
        while True:
            n += 1
            ratio *= z / (n - 0.5)
            term = ratio / n
            y = term - compensation
            t = total + y
            compensation = (t - total) - y
            total = t
            if n > abs(z) and abs(term) < 1e-16 * abs(total):
                return total

    w = -z
    width = 40.0 * math.sqrt(w) + 40.0
    n = np.arange(max(0, math.floor(w - width)), math.ceil(w + width) + 1)
    weights = stats.poisson.pmf(n, w)
    increments = special.digamma(n + 0.5) - special.digamma(0.5)
    return -math.fsum(weights * increments)


class GTildeTable:
    """
    Lookup table of G̃ and G̃' on a uniform grid of non-positive arguments

    Nodes run from 0 down to ``z_min``. Values between nodes come from cubic
    Hermite interpolation of the tabulated (G̃, G̃') pairs, so ``prime`` is the
    exact derivative of ``value``. Below ``z_min`` the asymptotic form
    G̃(z) ≈ kappa - log(-z) + 1/(-2z) is used, with kappa matched to the last node.
    """

    _instance: ClassVar[Optional['GTildeTable']] = None
    _lock: ClassVar[Lock] = Lock()

    def __init__(self, z_min: float = -700.0, n_nodes: int = 100_000, refine: int = 8):
        if z_min >= 0 or n_nodes < 2 or refine < 1:
            raise DomainError("Table needs z_min < 0, at least two nodes and a positive refinement")

        self.z_min = float(z_min)
        self.w_max = -self.z_min
        w = np.linspace(0.0, self.w_max, n_nodes)

        # Values by cumulative trapezoid over a refined grid of the exact derivative
        fine = np.linspace(0.0, self.w_max, (n_nodes - 1) * refine + 1)
        slope_fine = _g_tilde_prime_exact(fine)
        values_fine = -integrate.cumulative_trapezoid(slope_fine, fine, initial=0.0)

        self.nodes = -w
        self.values = values_fine[::refine].copy()
        self.derivative_values = slope_fine[::refine].copy()

        # Interpolate in w = -z so abscissae increase
        self._spline = interpolate.CubicHermiteSpline(w, self.values, -self.derivative_values)
        self._spline_slope = self._spline.derivative()

        kappa = self.values[-1] + math.log(self.w_max) - 0.5 / self.w_max
        self.asymptotic_params = {'kappa': float(kappa)}

        logging.debug(f"Built G̃ table with {n_nodes} nodes on [{self.z_min}, 0], kappa={kappa:.12f}")

    @classmethod
    def default(cls) -> 'GTildeTable':
        """Process-wide table, built on first use"""
        with cls._lock:
            if cls._instance is None:
                cls._instance = cls()
            return cls._instance

    def value(self, z: ArrayLike) -> ArrayLike:
        scalar = np.ndim(z) == 0
        z = np.asarray(z, dtype=float)
        _check_non_positive(z)
        w = -z
        inside = w <= self.w_max
        out = np.empty_like(w)
        out[inside] = self._spline(w[inside])
        tail = w[~inside]
        out[~inside] = self.asymptotic_params['kappa'] - np.log(tail) + 0.5 / tail
        return _as_output(out, scalar)

    def prime(self, z: ArrayLike) -> ArrayLike:
        scalar = np.ndim(z) == 0
        z = np.asarray(z, dtype=float)
        _check_non_positive(z)
        w = -z
        inside = w <= self.w_max
        out = np.empty_like(w)
        out[inside] = -self._spline_slope(w[inside])
        tail = w[~inside]
        out[~inside] = 1.0 / tail + 0.5 / tail ** 2
        return _as_output(out, scalar)


def g_tilde(z: ArrayLike) -> ArrayLike:
    """G̃(z) for z <= 0"""
    return GTildeTable.default().value(z)


def g_tilde_prime(z: ArrayLike) -> ArrayLike:
    """dG̃/dz for z <= 0"""
    return GTildeTable.default().prime(z)


def expected_log_square(mean: ArrayLike, variance: ArrayLike) -> ArrayLike:
    """
    E[log f^2] for f ~ Normal(mean, variance)

    Evaluated as -G̃(-mean^2 / (2 variance)) + log(variance / 2) - C with C the
    Euler-Mascheroni constant.
    """
    scalar = np.ndim(mean) == 0 and np.ndim(variance) == 0
    mean = np.asarray(mean, dtype=float)
    variance = np.asarray(variance, dtype=float)
    _check_positive(variance, "variance")
    z = -mean ** 2 / (2.0 * variance)
    out = -np.asarray(g_tilde(z)) + np.log(variance / 2.0) - EULER_GAMMA
    return _as_output(out, scalar)


def expected_log_square_with_grad(mean: np.ndarray, variance: np.ndarray):
    """
    E[log f^2] together with its partial derivatives in mean and variance

    Returns:
        Tuple (value, d value / d mean, d value / d variance)
    """
    mean = np.asarray(mean, dtype=float)
    variance = np.asarray(variance, dtype=float)
    _check_positive(variance, "variance")
    z = -mean ** 2 / (2.0 * variance)
    table = GTildeTable.default()
    slope = np.asarray(table.prime(z))
    value = -np.asarray(table.value(z)) + np.log(variance / 2.0) - EULER_GAMMA
    d_mean = slope * mean / variance
    d_variance = 1.0 / variance - slope * mean ** 2 / (2.0 * variance ** 2)
    return value, d_mean, d_variance


def digamma(x: ArrayLike) -> ArrayLike:
    scalar = np.ndim(x) == 0
    x = np.asarray(x, dtype=float)
    _check_positive(x)
    return _as_output(special.digamma(x), scalar)


def trigamma(x: ArrayLike) -> ArrayLike:
    scalar = np.ndim(x) == 0
    x = np.asarray(x, dtype=float)
    _check_positive(x)
    return _as_output(special.polygamma(1, x), scalar)


def log_gamma(x: ArrayLike) -> ArrayLike:
    scalar = np.ndim(x) == 0
    x = np.asarray(x, dtype=float)
    _check_positive(x)
    return _as_output(special.gammaln(x), scalar)


def erf(x: ArrayLike) -> ArrayLike:
    scalar = np.ndim(x) == 0
    return _as_output(special.erf(np.asarray(x, dtype=float)), scalar)
