import numpy as np
import pytest

from vb_hawkes.engine import HawkesObjective, VariationalState
from vb_hawkes.kernel_gp import GPContext
from vb_hawkes.models import EventSequence, KernelConfig, Priors
from vb_hawkes.simulator import SimConfig, get_kernel, make_rng, simulate


@pytest.fixture
def small_events():
    return EventSequence(np.array([0.2, 0.5, 0.9, 1.4, 2.1]), t_max=2.5, label="small")


@pytest.fixture
def small_gp(small_events):
    # three inducing points at 0, 1.25, 2.5; well conditioned for α = 0.3
    return GPContext.build(small_events.domain, KernelConfig(gamma=1.0, alphas=[0.3]), per_dim=3)


@pytest.fixture
def small_priors():
    return Priors(k0=2.0, c0=0.8)


@pytest.fixture
def small_objective(small_events, small_priors, small_gp):
    return HawkesObjective(small_events, small_priors, small_gp)


@pytest.fixture
def random_state():
    """Factory for a random valid variational state of size M"""
    def build(size: int, seed: int) -> VariationalState:
        rng = make_rng(seed)
        lower = np.tril(0.1 * rng.normal(size=(size, size)), k=-1)
        lower += np.diag(rng.uniform(0.3, 0.6, size=size))
        return VariationalState(m=0.5 * rng.normal(size=size), s_factor=lower,
                                k=float(rng.uniform(1.0, 5.0)), c=float(rng.uniform(0.5, 2.0)))
    return build


@pytest.fixture
def exp_events():
    """A short self-exciting sequence for end-to-end fits"""
    kernel = get_kernel('exp').scaled(0.5)
    return simulate(SimConfig(mu=5.0, kernel=kernel, t_max=3.0, seed=11)).events
