import math

import numpy as np
import pytest

from genebsde.bounds import DensityEnvelope, GaussianFinalData
from genebsde.model import GeneNetwork
from genebsde.ssa import (
    Histogram,
    SsaConfig,
    SsaError,
    envelope_coverage,
    fit_final_data,
    histogram,
    simulate_ensemble,
    simulate_trajectory,
    step_propensities,
    write_samples_csv,
)


def test_propensity_examples(net532):
    net = GeneNetwork(np.zeros((2, 2)), [1.0, 3.0], [0.5, 0.7])
    assert np.allclose(step_propensities(net, [0, 0]), [0.5, 1.5, 0.0, 0.0])
    assert np.allclose(step_propensities(net, [4, 10]), [0.5, 1.5, 2.0, 7.0])
    p = step_propensities(net532, [100, 100, 100])
    assert p[0] == 0.5
    assert np.allclose(p[3:], [20.0, 50.0, 60.0])
    with pytest.raises(ValueError):
        step_propensities(net, [-1, 0])


def test_config_validation(net532):
    with pytest.raises(ValueError):
        SsaConfig(net532, [1, 2], 1.0)
    with pytest.raises(ValueError):
        SsaConfig(net532, [1, -2, 3], 1.0)
    with pytest.raises(ValueError):
        SsaConfig(net532, [1, 2, 3], 1.0, ensemble_size=0)
    with pytest.raises(ValueError):
        SsaConfig(net532, [1, 2, 3], 0.0)


def test_pure_death_mean():
    rho, k = 0.7, 50
    net = GeneNetwork([[0.0]], [0.0], [rho], allow_zero_synthesis=True)
    cfg = SsaConfig(net, [k], T=2.0, ensemble_size=10_000, seed=1)
    s = simulate_ensemble(cfg, [0.5, 1.0, 2.0])[:, :, 0]
    for j, t in enumerate([0.5, 1.0, 2.0]):
        p = math.exp(-rho * t)
        se = math.sqrt(k * p * (1 - p) / s.shape[0])
        assert abs(s[:, j].mean() - k * p) < 3 * se


def test_uncoupled_stationary_poisson():
    nu, rho = np.array([10.0, 4.0]), np.array([0.5, 1.0])
    net = GeneNetwork(np.zeros((2, 2)), nu, rho)
    cfg = SsaConfig(net, [0, 0], T=30.0, ensemble_size=10_000, seed=2)
    s = simulate_ensemble(cfg, [30.0], threads=2)[:, 0, :]
    lam = nu / (2 * rho)
    m = s.mean(axis=0)
    assert np.all(np.abs(m - lam) < 3 * np.sqrt(lam / s.shape[0]))
    ratio = s.var(axis=0, ddof=1) / m
    assert np.all(np.abs(ratio - 1) < 3 * math.sqrt(2 / s.shape[0]) + 0.01)
    # independence of the two genes
    r = np.corrcoef(s.T)[0, 1]
    assert abs(r) < 3 / math.sqrt(s.shape[0])


def test_zero_propensity_stays_constant():
    net = GeneNetwork([[0.0]], [0.0], [1.0], allow_zero_synthesis=True)
    cfg = SsaConfig(net, [0], T=5.0, ensemble_size=3)
    tr = simulate_trajectory(cfg, 0)
    assert tr.times.tolist() == [0.0] and tr.at(5.0).tolist() == [0]
    assert np.all(simulate_ensemble(cfg, [1.0, 5.0]) == 0)


def test_reproducible_and_order_independent(net_sim1):
    cfg = SsaConfig(net_sim1, [200, 20, 20], T=1.0, ensemble_size=64, seed=99)
    a = simulate_ensemble(cfg, [0.5, 1.0], threads=1)
    b = simulate_ensemble(cfg, [0.5, 1.0], threads=3)
    assert np.array_equal(a, b)
    c = simulate_ensemble(SsaConfig(net_sim1, [200, 20, 20], 1.0, 64, seed=100), [0.5, 1.0])
    assert not np.array_equal(a, c)


def test_trajectory_matches_ensemble_stream(net_sim1):
    cfg = SsaConfig(net_sim1, [200, 20, 20], T=1.0, ensemble_size=8, seed=5)
    ens = simulate_ensemble(cfg, [0.25, 1.0])
    for k in (0, 7):
        tr = simulate_trajectory(cfg, k)
        assert np.array_equal(tr.at(0.25), ens[k, 0]) and np.array_equal(tr.at(1.0), ens[k, 1])
        assert np.all(np.diff(tr.times) > 0)
        assert np.all(np.abs(np.diff(tr.states, axis=0)).sum(axis=1) == 1)
        assert np.all(tr.states >= 0)


def test_last_event_lookup():
    from genebsde.ssa import Trajectory

    tr = Trajectory(np.array([0.0, 1.0, 2.0]), np.array([[5], [6], [7]]))
    assert tr.at(0.5).tolist() == [5]
    assert tr.at(1.0).tolist() == [6]
    assert tr.at(10.0).tolist() == [7]


def test_runaway_is_reported():
    net = GeneNetwork([[0.0]], [1000.0], [1e-9])
    cfg = SsaConfig(net, [0], T=10.0, ensemble_size=1)
    with pytest.raises(SsaError, match="exceeded"):
        simulate_ensemble(cfg, [10.0], max_count=100)
    with pytest.raises(SsaError):
        simulate_trajectory(cfg, 0, max_count=100)


def test_sample_time_validation(net_sim1):
    cfg = SsaConfig(net_sim1, [1, 1, 1], T=1.0, ensemble_size=1)
    with pytest.raises(ValueError):
        simulate_ensemble(cfg, [0.5, 0.2])
    with pytest.raises(ValueError):
        simulate_ensemble(cfg, [2.0])


def test_fit_final_data_recovers_parameters():
    rng = np.random.default_rng(0)
    T, c, b = 4.0, np.array([4.89, 0.47]), np.array([75.98, 7.84])
    x = c * rng.normal(0, math.sqrt(T), (40_000, 2)) + b
    fd = fit_final_data(x, T)
    se = 4 / math.sqrt(x.shape[0])
    assert np.allclose(fd.c, c, rtol=se) and np.allclose(fd.b, b, atol=5 * c * math.sqrt(T) * se)
    with pytest.raises(ValueError):
        fit_final_data(np.full((10, 2), 3.0), T)
    with pytest.raises(ValueError):
        fit_final_data(np.ones((1, 2)), T)


def test_histogram_basics():
    h = histogram([5, 5, 5, 5], bin_width=1)
    assert h.counts.sum() == h.total == 4
    assert np.allclose(h.density[h.counts > 0], 1.0)
    h = histogram(np.arange(100), bin_width=3)
    assert np.allclose(h.edges[:2], [-0.5, 2.5]) and h.counts.sum() == 100
    assert h.edges[0] <= 0 and h.edges[-1] >= 99
    h = histogram(np.linspace(0, 1, 1000), bin_count=10)
    assert np.isclose((h.density * h.widths).sum(), 1.0)
    with pytest.raises(ValueError):
        histogram([])
    with pytest.raises(ValueError):
        histogram([1, 2], bin_width=0)


def test_coverage_of_exact_gaussian():
    rng = np.random.default_rng(11)
    sigma, mean = 3.0, 50.0
    x = rng.normal(mean, sigma, 200_000)
    # with lam = Lam = sigma^2 and abs_dev = sigma sqrt(2/pi) both curves equal the
    # N(mean, sigma^2) density; widening the pair by 10% leaves a band around it
    abs_dev = sigma * math.sqrt(2 / math.pi)
    exact = DensityEnvelope(sigma**2, sigma**2, mean, abs_dev)
    xs = np.linspace(40, 60, 11)
    lo, up = exact.density_bounds(xs)
    assert np.allclose(lo, up) and np.allclose(lo, np.exp(-((xs - mean) ** 2) / (2 * sigma**2)) / (sigma * math.sqrt(2 * math.pi)))
    env = DensityEnvelope(0.9 * sigma**2, 1.1 * sigma**2, mean, abs_dev)
    cov = envelope_coverage(histogram(x, bin_count=60), env)
    assert cov["bins_used"] > 30 and cov["coverage"] >= 0.95


def test_coverage_counts():
    h = Histogram(np.array([0.0, 1.0, 2.0]), np.array([30, 10]), 40)
    env = DensityEnvelope(1.0, 1.0, 0.5, 1.0)
    cov = envelope_coverage(h, env, min_count=20)
    assert cov["bins_used"] == 1


def test_samples_csv(tmp_path):
    s = np.arange(12).reshape(2, 2, 3)
    p = tmp_path / "s.csv"
    write_samples_csv(p, s, [1.0, 2.0])
    rows = p.read_text().splitlines()
    assert rows[0] == "trajectory,gene,t,count" and len(rows) == 13
    assert rows[1] == "0,1,1.0,0"
