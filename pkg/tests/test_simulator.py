import math

import numpy as np
import pytest
from pytest import approx
from scipy import stats

from vb_hawkes.errors import ArgumentError, DataError, ExplosionError
from vb_hawkes.simulator import (SimConfig, TriggeringKernel, get_kernel, intensity_at, make_rng, simulate,
                                 simulate_clusters)


class TestKernels:
    def test_values(self):
        sin, cos, exp = get_kernel('sin'), get_kernel('cos'), get_kernel('exp')
        assert sin(0.0) == approx(0.9)
        assert sin(math.pi / 6) == approx(1.8)
        assert cos(0.0) == approx(2.0)
        assert exp(0.0) == approx(5.0)

    def test_zero_outside_support(self):
        for name in ('sin', 'cos'):
            kernel = get_kernel(name)
            assert kernel(math.pi / 2 + 1e-6) == 0.0
            assert kernel(-0.1) == 0.0

    @pytest.mark.parametrize("name, expected", [
        ('sin', 0.3 + 0.45 * math.pi),
        ('cos', math.pi / 2),
        ('exp', 1.0),
        ('zero', 0.0),
    ])
    def test_branching_ratio(self, name, expected):
        assert get_kernel(name).branching_ratio() == approx(expected, abs=1e-8)

    @pytest.mark.parametrize("name", ['sin', 'cos', 'exp'])
    def test_upper_bound_dominates_tail(self, name):
        kernel = get_kernel(name)
        lags = np.linspace(0.0, 3.0, 301)
        values = kernel(lags)
        tail_max = np.maximum.accumulate(values[::-1])[::-1]
        assert np.all(kernel.upper_bound(lags) >= tail_max - 1e-12)

    def test_scaled(self):
        kernel = get_kernel('sin').scaled(0.5)
        assert kernel(0.0) == approx(0.45)
        assert kernel.phi_max == approx(0.9)
        assert kernel.branching_ratio() == approx(0.5 * (0.3 + 0.45 * math.pi), abs=1e-8)
        with pytest.raises(ArgumentError):
            get_kernel('sin').scaled(-1.0)

    def test_unknown(self):
        with pytest.raises(ArgumentError):
            get_kernel('bogus')


class TestTabulatedKernel:
    def test_interpolation(self):
        kernel = TriggeringKernel.from_table([0.0, 1.0, 2.0], [0.0, 2.0, 1.0])
        assert kernel(0.5) == approx(1.0)
        assert kernel(1.5) == approx(1.5)
        assert kernel(2.5) == 0.0
        assert kernel.support == 2.0

    def test_upper_bound_is_suffix_maximum(self):
        kernel = TriggeringKernel.from_table([0.0, 1.0, 2.0], [0.0, 2.0, 1.0])
        lags = np.linspace(0.0, 2.5, 251)
        values = kernel(lags)
        tail_max = np.maximum.accumulate(values[::-1])[::-1]
        assert np.all(kernel.upper_bound(lags) >= tail_max - 1e-12)
        assert kernel.upper_bound(0.2) == approx(2.0)

    @pytest.mark.parametrize("lags, values", [
        ([0.0], [1.0]),
        ([0.0, 0.0], [1.0, 1.0]),
        ([-1.0, 1.0], [1.0, 1.0]),
        ([0.0, 1.0], [1.0, -1.0]),
    ])
    def test_invalid(self, lags, values):
        with pytest.raises(DataError):
            TriggeringKernel.from_table(lags, values)

    def test_from_csv(self, tmp_path):
        path = tmp_path / "kernel.csv"
        path.write_text("lag,value\n0,1.0\n0.5,0.5\n1.0,0.0\n")
        kernel = get_kernel(str(path))
        assert kernel(0.25) == approx(0.75)
        assert kernel.branching_ratio() == approx(0.5, abs=1e-6)
        result = simulate(SimConfig(mu=5.0, kernel=kernel, seed=2))
        assert len(result.events) > 0

    def test_csv_without_columns(self, tmp_path):
        path = tmp_path / "kernel.csv"
        path.write_text("a,b\n0,1\n1,0\n")
        with pytest.raises(DataError):
            TriggeringKernel.from_csv(str(path))


class TestIntensity:
    def test_empty_history(self):
        assert intensity_at(1.0, [], 3.0, get_kernel('sin')) == 3.0

    def test_sin(self):
        assert intensity_at(1.0, [0.0], 10.0, get_kernel('sin')) == approx(10.0 + 0.9 * math.sin(3.0) + 0.9)

    def test_exp_just_after_event(self):
        assert intensity_at(1.0 + 1e-12, [1.0], 10.0, get_kernel('exp')) == approx(15.0)

    def test_future_events_ignored(self):
        assert intensity_at(1.0, [1.0, 2.0], 4.0, get_kernel('cos')) == 4.0


class TestSimulate:
    def test_no_background(self):
        result = simulate(SimConfig(mu=0.0, kernel=get_kernel('sin')))
        assert len(result.events) == 0

    def test_deterministic(self):
        first = simulate(SimConfig(mu=10.0, kernel=get_kernel('sin'), seed=3)).events.times
        second = simulate(SimConfig(mu=10.0, kernel=get_kernel('sin'), seed=3)).events.times
        np.testing.assert_array_equal(first, second)
        other = simulate(SimConfig(mu=10.0, kernel=get_kernel('sin'), seed=4)).events.times
        assert first.size != other.size or not np.array_equal(first, other)

    def test_generators_agree(self):
        assert make_rng(5).uniform() == make_rng(5).uniform()

    @pytest.mark.parametrize("name", ['sin', 'cos', 'exp'])
    def test_branching_structure(self, name):
        kernel = get_kernel(name)
        result = simulate(SimConfig(mu=10.0, kernel=kernel, seed=1))
        times, parents = result.events.times, result.parents
        assert np.all(np.diff(times) > 0)
        assert times[0] >= 0 and times[-1] <= math.pi
        index = np.arange(times.size)
        children = parents >= 0
        assert np.all(parents[children] < index[children])
        assert np.all(times[children] - times[parents[children]] <= kernel.horizon)

    def test_metadata(self):
        result = simulate(SimConfig(mu=10.0, kernel=get_kernel('cos'), seed=9, record_branching=False))
        assert result.parents is None
        assert result.events.metadata['kernel'] == 'cos'
        assert result.metadata['n_events'] == len(result.events)

    def test_poisson_count(self):
        counts = [len(simulate(SimConfig(mu=10.0, kernel=get_kernel('zero'), seed=seed)).events)
                  for seed in range(200)]
        assert np.mean(counts) == approx(10.0 * math.pi, abs=3 * math.sqrt(10.0 * math.pi / 200))

    def test_poisson_gaps_exponential(self):
        pvalues = []
        for seed in range(200):
            times = simulate(SimConfig(mu=10.0, kernel=get_kernel('zero'), seed=seed)).events.times
            gaps = np.diff(np.concatenate([[0.0], times]))
            pvalues.append(stats.kstest(gaps, 'expon', args=(0.0, 0.1)).pvalue)
        assert np.mean(np.asarray(pvalues) > 0.01) >= 0.95

    def test_poisson_times_uniform(self):
        pooled = np.concatenate([simulate(SimConfig(mu=10.0, kernel=get_kernel('zero'), seed=seed)).events.times
                                 for seed in range(50)])
        assert stats.kstest(pooled / math.pi, 'uniform').pvalue > 0.01

    def test_explosion(self):
        kernel = get_kernel('sin').scaled(5.0)
        with pytest.raises(ExplosionError):
            simulate(SimConfig(mu=10.0, kernel=kernel, max_events=1000))
        with pytest.raises(ExplosionError):
            simulate_clusters(SimConfig(mu=10.0, kernel=kernel, max_events=100))

    @pytest.mark.parametrize("kwargs", [dict(mu=-1.0), dict(mu=1.0, t_max=0.0)])
    def test_invalid_config(self, kwargs):
        with pytest.raises(ArgumentError):
            SimConfig(kernel=get_kernel('sin'), **kwargs)


class TestClusters:
    def test_parents(self):
        result = simulate_clusters(SimConfig(mu=10.0, kernel=get_kernel('sin'), seed=6))
        times, parents = result.events.times, result.parents
        children = parents >= 0
        assert np.all(times[children] > times[parents[children]])
        assert np.all(times[children] - times[parents[children]] <= math.pi / 2)

    @pytest.mark.slow
    @pytest.mark.parametrize("name", ['sin', 'exp'])
    def test_matches_thinning(self, name):
        kernel = get_kernel(name)
        runs = 300
        thinning = [len(simulate(SimConfig(mu=10.0, kernel=kernel, seed=seed)).events) for seed in range(runs)]
        clusters = [len(simulate_clusters(SimConfig(mu=10.0, kernel=kernel, seed=runs + seed)).events)
                    for seed in range(runs)]
        se = math.sqrt(np.var(thinning, ddof=1) / runs + np.var(clusters, ddof=1) / runs)
        assert abs(np.mean(thinning) - np.mean(clusters)) <= 3 * se
