import numpy as np
import pytest

from ratefield.mc import (EmpiricalMoments, McConfig, compare_mc_mf,
                          default_checkpoints, empirical_moments, run_ensemble,
                          sample_weights, simulate_network)
from ratefield.meanfield import ou_covariance, solve_fixed_point
from ratefield.model import (ConnectivityStats, Constant, NetworkSpec,
                             PopulationParams, Tanh, TimeGrid)
from ratefield.quadrature import gh_rule

RULE = gh_rule(40)


def one_pop(tau=0.25, f=0.0, j=0.0, sigma=0.0, v0=0.0, mu0=0.0, g=0.5, inp=0.0):
    return NetworkSpec(
        populations=(PopulationParams(tau=tau, f=f, sigmoid=Tanh(g=g),
                                      input=Constant(inp)),),
        connectivity=ConnectivityStats([[j]], [[sigma]]),
        initial_mean=[mu0], initial_variance=[v0])


# ---------------------------------------------------------------------------
# Weight sampling
# ---------------------------------------------------------------------------

def test_weights_degenerate_at_zero_dispersion():
    stats = ConnectivityStats([[2.0]], [[0.0]])
    w = sample_weights(stats, [5], np.random.default_rng(0))
    assert np.all(w == 2.0 / 5)


def test_weights_block_statistics():
    stats = ConnectivityStats([[1.0]], [[1.0]])
    n = 400
    w = sample_weights(stats, [n], np.random.default_rng(42))
    row = w[0]
    se = (1.0 / np.sqrt(n)) / np.sqrt(n)
    assert abs(row.mean() - 1.0 / n) < 4 * se
    assert abs(row.std(ddof=1) - 1.0 / 20) < 0.1 / 20


def test_weights_two_population_blocks():
    stats = ConnectivityStats([[1.0, -2.0], [2.0, 1.0]], [[0.0, 0.0], [0.0, 0.0]])
    w = sample_weights(stats, [3, 2], np.random.default_rng(1))
    assert np.all(w[:3, :3] == 1.0 / 3)
    assert np.all(w[:3, 3:] == -2.0 / 2)
    assert np.all(w[3:, :3] == 2.0 / 3)
    assert np.all(w[3:, 3:] == 1.0 / 2)


def test_weights_deterministic_for_fixed_seed():
    stats = ConnectivityStats([[1.0]], [[0.7]])
    a = sample_weights(stats, [50], np.random.default_rng(99))
    b = sample_weights(stats, [50], np.random.default_rng(99))
    assert np.array_equal(a, b)


# ---------------------------------------------------------------------------
# SDE integration
# ---------------------------------------------------------------------------

def test_noiseless_uncoupled_network_decays():
    spec = one_pop(tau=1.0, mu0=1.0)
    grid = TimeGrid(0.0, 3.0, 0.05)
    mc = McConfig(sizes=(4,), trials=2, seed=3, dt_sde=0.01)
    w = np.zeros((4, 4))
    volt, curr = simulate_network(spec, grid, w, mc, trial_index=0)
    want = np.exp(-grid.times)
    assert np.max(np.abs(volt - want[None, :])) < 3 * mc.dt_sde
    assert np.all(curr == 0.0)


def test_single_neuron_variance_matches_ou():
    spec = one_pop(tau=0.5, f=1.0)
    grid = TimeGrid(0.0, 1.0, 0.025)
    mc = McConfig(sizes=(200,), trials=50, seed=11, dt_sde=0.005)
    ens = run_ensemble(spec, grid, mc)
    moments = empirical_moments(ens)
    t_idx = np.argmin(np.abs(grid.times - 1.0))
    want = ou_covariance(0.5, 1.0, 0.0, 1.0, 1.0)     # (tau f^2/2)(1 - e^{-2t/tau})
    z = abs(moments.var[0, t_idx] - want) / moments.var_se[0, t_idx]
    assert z < 4


def test_simulation_bit_reproducible():
    spec = one_pop(tau=0.5, f=0.7, j=0.8, sigma=0.5, v0=0.1, g=2.0)
    grid = TimeGrid(0.0, 1.0, 0.05)
    mc = McConfig(sizes=(20,), trials=4, seed=123, dt_sde=0.01)
    a = run_ensemble(spec, grid, mc)
    b = run_ensemble(spec, grid, mc)
    for r in range(mc.trials):
        assert np.array_equal(a.voltages[r], b.voltages[r])
        assert np.array_equal(a.weights[r], b.weights[r])
        assert np.array_equal(a.currents[r], b.currents[r])


def test_threaded_ensemble_matches_serial():
    spec = one_pop(tau=0.5, f=0.3, j=0.5, sigma=0.4, v0=0.0, g=1.0)
    grid = TimeGrid(0.0, 0.5, 0.05)
    mc = McConfig(sizes=(10,), trials=6, seed=7, dt_sde=0.01)
    serial = run_ensemble(spec, grid, mc, threads=1)
    threaded = run_ensemble(spec, grid, mc, threads=3)
    for r in range(mc.trials):
        assert np.array_equal(serial.voltages[r], threaded.voltages[r])


def test_frozen_weights_shared_across_trials():
    spec = one_pop(j=1.0, sigma=0.5)
    grid = TimeGrid(0.0, 0.2, 0.05)
    mc = McConfig(sizes=(8,), trials=3, seed=5, dt_sde=0.01,
                  resample_weights_per_trial=False)
    ens = run_ensemble(spec, grid, mc)
    assert np.array_equal(ens.weights[0], ens.weights[1])
    assert np.array_equal(ens.weights[0], ens.weights[2])
    resampled = run_ensemble(spec, grid, McConfig(sizes=(8,), trials=3, seed=5,
                                                  dt_sde=0.01))
    assert not np.array_equal(resampled.weights[0], resampled.weights[1])


def test_config_validation():
    with pytest.raises(ValueError):
        McConfig(sizes=(0,), trials=5, seed=1, dt_sde=0.01)
    with pytest.raises(ValueError):
        McConfig(sizes=(5,), trials=1, seed=1, dt_sde=0.01)
    with pytest.raises(ValueError):
        McConfig(sizes=(5,), trials=2, seed=1, dt_sde=-0.01)


# ---------------------------------------------------------------------------
# Moment estimation
# ---------------------------------------------------------------------------

def test_deterministic_network_has_zero_variance():
    spec = one_pop(tau=0.5, f=0.0, j=0.3, sigma=0.0, v0=0.0, mu0=0.4, g=1.0)
    grid = TimeGrid(0.0, 1.0, 0.1)
    mc = McConfig(sizes=(10,), trials=3, seed=1, dt_sde=0.02)
    moments = empirical_moments(run_ensemble(spec, grid, mc))
    # trials and neurons are bit-identical; the estimates sit at the
    # rounding floor of the sample-mean subtraction
    assert np.all(moments.var < 1e-30)
    assert np.all(moments.var_se < 1e-30)
    assert np.all(moments.mean_se < 1e-15)


def test_se_scales_with_inverse_sqrt_trials():
    spec = one_pop(tau=0.5, f=0.8)
    grid = TimeGrid(0.0, 0.5, 0.05)

    def se_at(trials):
        mc = McConfig(sizes=(16,), trials=trials, seed=21, dt_sde=0.01)
        return empirical_moments(run_ensemble(spec, grid, mc)).mean_se[0, -1]

    ratio = se_at(100) / se_at(400)
    assert 2.0 * 0.8 < ratio < 2.0 * 1.2


def test_compare_is_zero_on_fabricated_moments():
    spec = one_pop(tau=0.5, f=0.5, v0=0.1)
    grid = TimeGrid(0.0, 1.0, 0.05)
    state, _ = solve_fixed_point(spec, grid, rule=RULE)
    cps = default_checkpoints(grid.n)
    p, n = state.mu.shape
    ncp = len(cps)
    lag = np.stack([state.cov[a][np.ix_(cps, cps)] for a in range(p)])
    ones = np.full((p, n), 0.01)
    fabricated = EmpiricalMoments(
        times=grid.times, checkpoints=cps,
        mean=state.mu.copy(), mean_se=ones.copy(),
        var=state.v.copy(), var_se=ones.copy(),
        lag_cov=lag, lag_cov_se=np.full_like(lag, 0.01),
        u_mean=np.zeros((p, p, n)), u_mean_se=np.full((p, p, n), 0.01),
        u_cov=np.zeros((p, p, ncp, ncp)), u_cov_se=np.full((p, p, ncp, ncp), 0.01),
        vu_corr=np.zeros((p, p, ncp)), trials=2)
    report = compare_mc_mf(spec, fabricated, state, RULE)
    assert report["max_z_mean"] == 0.0
    assert report["max_z_var"] == 0.0
    assert report["max_z_lag_cov"] == 0.0


def test_zero_coupling_validation_against_exact_ou():
    spec = one_pop(tau=0.25, f=1.0, v0=0.0)
    grid = TimeGrid(0.0, 1.0, 0.025)
    state, _ = solve_fixed_point(spec, grid, rule=RULE)
    mc = McConfig(sizes=(100,), trials=150, seed=2024, dt_sde=0.005)
    moments = empirical_moments(run_ensemble(spec, grid, mc))
    report = compare_mc_mf(spec, moments, state, RULE)
    assert report["max_z"] <= 4.0


def test_coupled_network_matches_mean_field():
    spec = one_pop(tau=0.25, f=0.3, j=1.0, sigma=1.0, v0=0.2, mu0=0.5, g=0.5,
                   inp=0.3)
    grid = TimeGrid(0.0, 1.5, 0.025)
    state, report = solve_fixed_point(spec, grid, rule=RULE)
    assert report.converged
    mc = McConfig(sizes=(300,), trials=100, seed=77, dt_sde=0.005)
    moments = empirical_moments(run_ensemble(spec, grid, mc))
    cmp = compare_mc_mf(spec, moments, state, RULE)
    assert cmp["max_z_mean"] <= 4.0
    assert cmp["max_z_var"] <= 4.0
