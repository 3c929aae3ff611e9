import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from pytest import approx
from scipy import integrate

from vb_hawkes.errors import ArgumentError, StateError
from vb_hawkes.kernel_gp import (GPContext, GramFactor, InducingGrid, check_factor, expected_square_integral,
                                 gram, gram_factor, integration_limits, kernel, posterior_moments, psi_matrix,
                                 psi_sum)
from vb_hawkes.models import Domain, KernelConfig
from vb_hawkes.simulator import make_rng

PI_DOMAIN = Domain.interval(0.0, math.pi)


def random_instance(seed):
    """Small 1-D configuration: grid, kernel, factor and a random q(u)"""
    rng = make_rng(seed)
    size = int(rng.integers(2, 5))
    cfg = KernelConfig(gamma=float(rng.uniform(0.5, 2.0)), alphas=[float(rng.uniform(0.3, 1.5))])
    grid = InducingGrid.regular(PI_DOMAIN, size)
    factor = GramFactor.build(grid, cfg)
    m = rng.normal(size=size)
    lower = np.tril(0.2 * rng.normal(size=(size, size)), k=-1) + np.diag(rng.uniform(0.2, 0.8, size=size))
    return rng, cfg, grid, factor, m, lower


class TestKernel:
    def test_same_point(self):
        cfg = KernelConfig(gamma=2.5, alphas=[0.7])
        assert kernel(1.3, 1.3, cfg) == approx(2.5)

    def test_direct_substitution(self):
        cfg = KernelConfig(gamma=1.0, alphas=[2.0])
        assert kernel(0.0, 2.0, cfg) == approx(math.exp(-1.0))

    @given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.1, 3), st.floats(0.01, 10))
    def test_symmetric_and_bounded(self, x, y, gamma, alpha):
        cfg = KernelConfig(gamma=gamma, alphas=[alpha])
        assert kernel(x, y, cfg) == kernel(y, x, cfg)
        assert kernel(x, y, cfg) <= gamma

    def test_ard_product(self):
        cfg = KernelConfig(gamma=1.5, alphas=[0.5, 2.0])
        expected = 1.5 * math.exp(-1.0 / 1.0) * math.exp(-4.0 / 4.0)
        assert kernel([0.0, 0.0], [1.0, 2.0], cfg) == approx(expected)

    def test_dimension_mismatch(self):
        cfg = KernelConfig(gamma=1.0, alphas=[1.0])
        with pytest.raises(ArgumentError):
            kernel([0.0, 1.0], [0.0, 1.0], cfg)
        with pytest.raises(ArgumentError):
            gram(np.zeros((3, 2)), np.zeros((2, 2)), cfg)

    @pytest.mark.parametrize("seed", range(5))
    def test_gram_is_psd(self, seed):
        rng = make_rng(seed)
        cfg = KernelConfig(gamma=float(rng.uniform(0.1, 5)), alphas=[float(rng.uniform(0.01, 3))])
        points = rng.uniform(0, 10, size=40)
        eigenvalues = np.linalg.eigvalsh(gram(points, points, cfg))
        assert eigenvalues.min() >= -1e-8 * cfg.gamma


class TestGrid:
    def test_regular_includes_endpoints(self):
        grid = InducingGrid.regular(Domain.interval(0.0, 2.0), 5)
        assert grid.size == 5
        assert grid.points[0, 0] == 0.0
        assert grid.points[-1, 0] == 2.0
        assert np.allclose(np.diff(grid.points[:, 0]), 0.5)

    def test_regular_two_dimensional(self):
        grid = InducingGrid.regular(Domain(lower=[0.0, 0.0], upper=[1.0, 2.0]), 3)
        assert grid.size == 9
        assert grid.dim == 2
        assert grid.shape == (3, 3)

    def test_needs_two_points(self):
        with pytest.raises(ArgumentError):
            InducingGrid.regular(PI_DOMAIN, 1)


class TestGramFactor:
    def test_reproduces_matrix(self):
        cfg = KernelConfig(gamma=1.2, alphas=[0.4])
        factor = GramFactor.build(InducingGrid.regular(PI_DOMAIN, 8), cfg)
        rebuilt = factor.lower @ factor.lower.T
        assert np.linalg.norm(rebuilt - factor.matrix) / np.linalg.norm(factor.matrix) < 1e-10
        assert factor.logdet == approx(np.linalg.slogdet(factor.matrix)[1], rel=1e-10)

    def test_jitter_on_diagonal(self):
        cfg = KernelConfig(gamma=2.0, alphas=[1.0])
        factor = GramFactor.build(InducingGrid.regular(PI_DOMAIN, 3), cfg)
        assert np.allclose(np.diag(factor.matrix), 2.0 + 2e-6)

    def test_solve(self):
        cfg = KernelConfig(gamma=1.0, alphas=[0.5])
        factor = GramFactor.build(InducingGrid.regular(PI_DOMAIN, 4), cfg)
        b = np.arange(4.0)
        assert np.allclose(factor.matrix @ factor.solve(b), b)

    def test_memoised(self):
        cfg = KernelConfig(gamma=1.0, alphas=[0.25])
        grid = InducingGrid.regular(PI_DOMAIN, 6)
        assert gram_factor(grid, cfg) is gram_factor(InducingGrid.regular(PI_DOMAIN, 6), KernelConfig(1.0, [0.25]))

    def test_dimension_mismatch(self):
        grid = InducingGrid.regular(Domain(lower=[0.0, 0.0], upper=[1.0, 1.0]), 2)
        with pytest.raises(ArgumentError):
            GramFactor.build(grid, KernelConfig(gamma=1.0, alphas=[1.0]))


class TestPosteriorMoments:
    def test_prior_is_recovered(self):
        cfg = KernelConfig(gamma=1.7, alphas=[0.5])
        grid = InducingGrid.regular(PI_DOMAIN, 5)
        factor = GramFactor.build(grid, cfg)
        mean, variance = posterior_moments(0.77, np.zeros(5), factor.lower, grid, factor, cfg)
        assert mean == 0.0
        assert variance == approx(1.7, rel=1e-10)

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_explicit_inverse(self, seed):
        rng, cfg, grid, factor, m, lower = random_instance(seed)
        x = rng.uniform(0, math.pi, size=6)
        mean, variance = posterior_moments(x, m, lower, grid, factor, cfg)

        k_inv = np.linalg.inv(factor.matrix)
        k_zx = gram(grid.points, x, cfg)
        s = lower @ lower.T
        expected_mean = k_zx.T @ k_inv @ m
        expected_var = (cfg.gamma - np.einsum('ij,ik,kj->j', k_zx, k_inv, k_zx)
                        + np.einsum('ij,ik,kj->j', k_zx, k_inv @ s @ k_inv, k_zx))
        np.testing.assert_allclose(mean, expected_mean, rtol=1e-8, atol=1e-10)
        np.testing.assert_allclose(variance, expected_var, rtol=1e-8, atol=1e-10)
        assert np.all(variance > 0)

    def test_interpolates_at_inducing_point(self):
        cfg = KernelConfig(gamma=1.0, alphas=[0.2])
        grid = InducingGrid.regular(PI_DOMAIN, 4)
        factor = GramFactor.build(grid, cfg)
        m = np.array([0.0, 1.5, 0.0, 0.0])
        mean, variance = posterior_moments(grid.points[1, 0], m, 1e-6 * np.eye(4), grid, factor, cfg)
        assert mean == approx(1.5, abs=1e-4)
        assert variance < 1e-4

    def test_rejects_singular_factor(self):
        cfg = KernelConfig(gamma=1.0, alphas=[0.5])
        grid = InducingGrid.regular(PI_DOMAIN, 3)
        factor = GramFactor.build(grid, cfg)
        with pytest.raises(StateError):
            posterior_moments(1.0, np.zeros(3), np.diag([1.0, 0.0, 1.0]), grid, factor, cfg)

    def test_projection_agrees(self):
        _, cfg, grid, factor, m, lower = random_instance(3)
        gp = GPContext.from_grid(PI_DOMAIN, cfg, grid)
        lags = np.array([0.1, 1.0, 2.9])
        a, prior_var = gp.projection(lags)
        mean, variance = gp.moments(lags, m, lower)
        np.testing.assert_allclose(a.T @ m, mean, rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(prior_var + np.sum((lower.T @ a) ** 2, axis=0), variance, rtol=1e-10)


def psi_oracle(upper, grid, cfg):
    size = grid.size
    out = np.zeros((size, size))
    for a in range(size):
        for b in range(size):
            integrand = lambda x: kernel(grid.points[a], x, cfg) * kernel(x, grid.points[b], cfg)
            out[a, b] = integrate.quad(integrand, 0.0, upper, epsabs=1e-13, epsrel=1e-12, limit=200)[0]
    return out


class TestPsi:
    def test_two_point_quadrature(self):
        cfg = KernelConfig(gamma=1.0, alphas=[1.0])
        grid = InducingGrid.from_points([1.0, 2.0])
        psi = psi_matrix(0.0, grid, cfg, PI_DOMAIN)
        np.testing.assert_allclose(psi, psi_oracle(math.pi, grid, cfg), atol=1e-8)

    @pytest.mark.parametrize("seed", range(20))
    def test_random_quadrature(self, seed):
        rng, cfg, grid, _, _, _ = random_instance(seed)
        x_i = float(rng.uniform(0, math.pi))
        support = float(rng.uniform(0.2, 2.0)) if seed % 2 else None
        psi = psi_matrix(x_i, grid, cfg, PI_DOMAIN, support)
        upper = math.pi - x_i if support is None else min(math.pi - x_i, support)
        np.testing.assert_allclose(psi, psi_oracle(upper, grid, cfg), atol=1e-8)
        assert np.linalg.eigvalsh(psi).min() >= -1e-10

    def test_far_corner_is_zero(self):
        cfg = KernelConfig(gamma=1.0, alphas=[0.5])
        grid = InducingGrid.regular(PI_DOMAIN, 4)
        assert np.allclose(psi_matrix(math.pi, grid, cfg, PI_DOMAIN), 0.0, atol=1e-15)

    def test_outside_domain(self):
        cfg = KernelConfig(gamma=1.0, alphas=[0.5])
        grid = InducingGrid.regular(PI_DOMAIN, 4)
        with pytest.raises(ArgumentError):
            psi_matrix(4.0, grid, cfg, PI_DOMAIN)

    def test_sum_over_events(self):
        cfg = KernelConfig(gamma=1.3, alphas=[0.6])
        grid = InducingGrid.regular(PI_DOMAIN, 5)
        events = np.array([0.1, 0.8, 2.0, 3.0])
        limits = integration_limits(events, PI_DOMAIN, support=1.0)
        expected = sum(psi_matrix(x, grid, cfg, PI_DOMAIN, support=1.0) for x in events)
        np.testing.assert_allclose(psi_sum(limits, grid, cfg), expected, rtol=1e-10, atol=1e-12)

    def test_two_dimensional_factorises(self):
        domain = Domain(lower=[0.0, 0.0], upper=[2.0, 1.5])
        cfg = KernelConfig(gamma=1.4, alphas=[0.5, 0.8])
        grid = InducingGrid.regular(domain, 3)
        limits = integration_limits([[0.3, 0.4], [1.0, 0.2]], domain)
        psi = psi_sum(limits, grid, cfg)

        expected = np.zeros_like(psi)
        for row in limits:
            axis0 = psi_sum(row[[0]], InducingGrid.from_points(grid.points[:, 0]), KernelConfig(1.0, [0.5]))
            axis1 = psi_sum(row[[1]], InducingGrid.from_points(grid.points[:, 1]), KernelConfig(1.0, [0.8]))
            expected += 1.4 ** 2 * axis0 * axis1
        np.testing.assert_allclose(psi, expected, rtol=1e-10, atol=1e-14)


class TestExpectedSquareIntegral:
    def test_prior_integrates_variance(self):
        cfg = KernelConfig(gamma=1.3, alphas=[0.5])
        grid = InducingGrid.regular(PI_DOMAIN, 5)
        factor = GramFactor.build(grid, cfg)
        value = expected_square_integral(1.0, np.zeros(5), factor.lower, grid, factor, cfg, PI_DOMAIN)
        assert value == approx(1.3 * (math.pi - 1.0), rel=1e-8)

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_quadrature(self, seed):
        rng, cfg, grid, factor, m, lower = random_instance(seed)
        x_i = float(rng.uniform(0, 3.0))
        support = 1.2 if seed % 3 == 0 else None
        value = expected_square_integral(x_i, m, lower, grid, factor, cfg, PI_DOMAIN, support)
        upper = math.pi - x_i if support is None else min(math.pi - x_i, support)

        def second_moment(x):
            mean, variance = posterior_moments(x, m, lower, grid, factor, cfg)
            return mean ** 2 + variance

        expected = integrate.quad(second_moment, 0.0, upper, epsabs=1e-12, epsrel=1e-10, limit=200)[0]
        assert value >= 0
        assert value == approx(expected, rel=1e-6, abs=1e-10)

    def test_far_corner(self):
        _, cfg, grid, factor, m, lower = random_instance(0)
        assert expected_square_integral(math.pi, m, lower, grid, factor, cfg, PI_DOMAIN) == approx(0.0, abs=1e-12)


class TestCheckFactor:
    def test_returns_lower_triangle(self):
        full = np.array([[1.0, 5.0], [0.5, 2.0]])
        assert np.array_equal(check_factor(full), np.array([[1.0, 0.0], [0.5, 2.0]]))

    @pytest.mark.parametrize("bad", [np.diag([1.0, -1.0]), np.ones(3), np.array([[np.nan, 0.0], [0.0, 1.0]])])
    def test_invalid(self, bad):
        with pytest.raises(StateError):
            check_factor(bad)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, math.pi), st.floats(0.05, 2.0))
def test_limits_respect_support(x, support):
    limits = integration_limits(x, PI_DOMAIN, support)
    assert limits.shape == (1, 1)
    assert 0.0 <= limits[0, 0] <= support
    assert limits[0, 0] <= math.pi - x + 1e-15
