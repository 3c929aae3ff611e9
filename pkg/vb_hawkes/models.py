from dataclasses import dataclass, field
from typing import Dict, List, Optional, Any
from dataclasses_json import dataclass_json
from datetime import datetime

import numpy as np

from .errors import ArgumentError

MODEL_FORMAT_VERSION = "vb_hawkes-model/1"


@dataclass_json
@dataclass
class Domain:
    """Axis-aligned observation window ×_r [lower_r, upper_r]"""
    lower: List[float] = field(default_factory=lambda: [0.0])
    upper: List[float] = field(default_factory=lambda: [np.pi])

    def __post_init__(self):
        self.lower = [float(v) for v in self.lower]
        self.upper = [float(v) for v in self.upper]
        if len(self.lower) != len(self.upper):
            raise ArgumentError("Domain bounds must have the same dimension")
        if any(hi <= lo for lo, hi in zip(self.lower, self.upper)):
            raise ArgumentError(f"Degenerate domain: {self.lower} .. {self.upper}")

    @classmethod
    def interval(cls, t_min: float, t_max: float) -> 'Domain':
        return cls(lower=[t_min], upper=[t_max])

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def widths(self) -> np.ndarray:
        return np.asarray(self.upper) - np.asarray(self.lower)

    @property
    def volume(self) -> float:
        return float(np.prod(self.widths))

    def lag_domain(self, span: Optional[float] = None) -> 'Domain':
        """Domain of the triggering kernel's argument: [0, width] per dimension,
        optionally capped at ``span``"""
        widths = self.widths if span is None else np.minimum(self.widths, span)
        return Domain(lower=[0.0] * self.dim, upper=[float(w) for w in widths])


@dataclass_json
@dataclass
class KernelConfig:
    """ARD kernel hyperparameters γ Π_r exp(-(x_r - x'_r)^2 / (2 α_r))"""
    gamma: float = 1.0
    alphas: List[float] = field(default_factory=lambda: [1.0])
    jitter: Optional[float] = None  # added to Gram diagonals, defaults to 1e-6 * gamma

    def __post_init__(self):
        self.gamma = float(self.gamma)
        self.alphas = [float(a) for a in np.atleast_1d(self.alphas)]
        if self.jitter is None:
            self.jitter = 1e-6 * self.gamma
        self.jitter = float(self.jitter)
        if self.gamma <= 0:
            raise ArgumentError(f"Kernel variance must be positive, got {self.gamma}")
        if not self.alphas or any(a <= 0 for a in self.alphas):
            raise ArgumentError(f"Length-scales must be positive, got {self.alphas}")
        if self.jitter <= 0:
            raise ArgumentError(f"Jitter must be positive, got {self.jitter}")

    @property
    def dim(self) -> int:
        return len(self.alphas)

    def key(self) -> tuple:
        """Hashable identity used for memoisation"""
        return (self.gamma, tuple(self.alphas), self.jitter)


@dataclass_json
@dataclass
class Priors:
    """Gamma(k0, c0) prior on the background rate; GP priors have zero mean"""
    k0: float = 1.0
    c0: float = 1.0

    def __post_init__(self):
        if self.k0 <= 0 or self.c0 <= 0:
            raise ArgumentError(f"Gamma prior parameters must be positive, got k0={self.k0}, c0={self.c0}")

    @classmethod
    def default_for(cls, n_events: int, volume: float) -> 'Priors':
        """k0 = 1 and prior mean rate equal to half the empirical rate"""
        return cls(k0=1.0, c0=0.5 * max(n_events, 1) / volume)


@dataclass_json
@dataclass
class FitConfig:
    """Settings of the variational EM loop"""
    max_em_iterations: int = 50
    elbo_relative_tolerance: float = 1e-5
    m_step_iterations: int = 25
    m_step_method: str = 'lbfgs'  # 'lbfgs' or 'gradient'
    initial_step: float = 1e-2  # first trial step of the gradient method
    max_backtracks: int = 40
    gradient_tolerance: float = 1e-10
    num_inducing: int = 10  # inducing points per dimension
    support: Optional[float] = None  # absolute truncation length, overrides support_fraction
    support_fraction: Optional[float] = 0.45  # fraction of |T|; None with support=None disables truncation
    grid_over_support: bool = False
    init_mean: str = 'rate'  # 'rate' or 'prior'
    closed_form_background: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.max_em_iterations < 1 or self.m_step_iterations < 1 or self.max_backtracks < 1:
            raise ArgumentError("Iteration counts must be positive")
        if self.elbo_relative_tolerance <= 0 or self.initial_step <= 0:
            raise ArgumentError("Tolerances and step sizes must be positive")
        if self.num_inducing < 2:
            raise ArgumentError("At least two inducing points per dimension are required")
        if self.m_step_method not in ('lbfgs', 'gradient'):
            raise ArgumentError(f"Unknown M-step method: {self.m_step_method}")
        if self.init_mean not in ('rate', 'prior'):
            raise ArgumentError(f"Unknown initial mean policy: {self.init_mean}")
        if self.support is not None and self.support <= 0:
            raise ArgumentError("Support length must be positive")
        if self.support_fraction is not None and self.support_fraction <= 0:
            raise ArgumentError("Support fraction must be positive")

    def resolve_support(self, domain: Domain) -> Optional[float]:
        """Truncation length s for this domain, or None when truncation is off"""
        if self.support is not None:
            return float(self.support)
        if self.support_fraction is not None:
            return float(self.support_fraction * domain.volume ** (1.0 / domain.dim))
        return None


@dataclass_json
@dataclass
class FitReport:
    """Per-iteration record of a variational EM run"""
    elbo_trace: List[float] = field(default_factory=list)
    bound_trace: List[float] = field(default_factory=list)
    kl_gamma_trace: List[float] = field(default_factory=list)
    kl_u_trace: List[float] = field(default_factory=list)
    iteration_seconds: List[float] = field(default_factory=list)
    m_step_stalls: List[bool] = field(default_factory=list)
    final_bound: float = float('nan')
    converged: bool = False
    iterations: int = 0
    fit_date: str = field(default_factory=lambda: datetime.now().isoformat())

    @property
    def mean_iteration_seconds(self) -> float:
        return float(np.mean(self.iteration_seconds)) if self.iteration_seconds else float('nan')


@dataclass_json
@dataclass
class EvalConfig:
    """Settings of the evaluation harness and the hyperparameter grid"""
    quadrature_points: int = 1000
    support: List[float] = field(default_factory=lambda: [0.0, 1.4])
    n_splits: int = 20
    seed: int = 0
    gammas: List[float] = field(default_factory=lambda: list(np.logspace(-1, 2, 7)))
    alphas: List[float] = field(default_factory=lambda: list(np.logspace(-3, 1, 7)))

    def __post_init__(self):
        if self.quadrature_points < 2 or self.n_splits < 1:
            raise ArgumentError("Quadrature size and split count must be positive")
        if len(self.support) != 2 or self.support[0] < 0 or self.support[1] <= self.support[0]:
            raise ArgumentError(f"Invalid predictive support: {self.support}")
        if not self.gammas or not self.alphas:
            raise ArgumentError("Hyperparameter grid must be non-empty")
        self.gammas = [float(g) for g in self.gammas]
        self.alphas = [float(a) for a in self.alphas]


@dataclass_json
@dataclass
class ModelFile:
    """Everything needed to reload a fitted model"""
    domain: Domain
    kernel: KernelConfig
    priors: Priors
    grid_points: List[List[float]]
    m: List[float]
    s_factor: List[List[float]]
    k: float
    c: float
    support: Optional[float] = None
    report: FitReport = field(default_factory=FitReport)
    fit_config: Optional[FitConfig] = None
    metadata: Dict[str, Any] = field(default_factory=dict)
    version: str = MODEL_FORMAT_VERSION


@dataclass
class EventSequence:
    """Sorted event timestamps on the window [t_min, t_max]"""
    times: np.ndarray
    t_max: float
    t_min: float = 0.0
    label: Optional[str] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float).ravel()
        self.t_min = float(self.t_min)
        self.t_max = float(self.t_max)
        if self.t_max <= self.t_min:
            raise ArgumentError(f"Empty observation window [{self.t_min}, {self.t_max}]")
        if self.times.size:
            if np.any(np.diff(self.times) <= 0):
                raise ArgumentError("Event timestamps must be strictly increasing")
            if self.times[0] < self.t_min or self.times[-1] > self.t_max:
                raise ArgumentError("Event timestamps must lie inside the observation window")

    def __len__(self) -> int:
        return int(self.times.size)

    @property
    def domain(self) -> Domain:
        return Domain.interval(self.t_min, self.t_max)

    @property
    def duration(self) -> float:
        return self.t_max - self.t_min

    def subset(self, mask: np.ndarray) -> 'EventSequence':
        return EventSequence(self.times[mask], t_max=self.t_max, t_min=self.t_min,
                             label=self.label, metadata=dict(self.metadata))
