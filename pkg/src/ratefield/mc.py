"""Finite-network Monte Carlo oracle.

Simulates the raw coupled SDE with frozen Gaussian weights by Euler-Maruyama
and estimates empirical moments of the voltages and of the per-neuron
interaction currents, for comparison against the mean-field solution.

Reproducibility: every trial draws from its own counter-based Philox stream
keyed by (seed, trial index), so results are bit-identical regardless of how
trials are scheduled across workers.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .meanfield import MomentState, NumericalError
from .model import ConnectivityStats, NetworkSpec, TimeGrid, validate_spec
from .quadrature import (BivariateGaussianStats, DEFAULT_ORDER, GhRule,
                         delta_kernel, gauss_expect, gh_rule)


@dataclass(frozen=True)
class McConfig:
    sizes: tuple[int, ...]
    trials: int
    seed: int
    dt_sde: float
    resample_weights_per_trial: bool = True

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        if any(s < 1 for s in self.sizes):
            raise ValueError("population sizes must be >= 1")
        if self.trials < 2:
            raise ValueError("need at least 2 trials for variance estimation")
        if not self.dt_sde > 0:
            raise ValueError("dt_sde must be positive")


@dataclass
class McEnsemble:
    """Per-trial voltage and interaction-current trajectories on the grid.

    voltages[r] is (N, n); currents[r] is (N, P, n) with currents[r][i, b]
    the summed input onto neuron i from source population b.
    """

    spec: NetworkSpec
    grid: TimeGrid
    config: McConfig
    voltages: list[np.ndarray] = field(default_factory=list)
    currents: list[np.ndarray] = field(default_factory=list)
    weights: list[np.ndarray] = field(default_factory=list)


@dataclass
class EmpiricalMoments:
    """Across-trial estimates (per population, full grid or checkpoint pairs)."""

    times: np.ndarray
    checkpoints: np.ndarray            # grid indices of the lag/correlation pairs
    mean: np.ndarray                   # (P, n)
    mean_se: np.ndarray
    var: np.ndarray                    # (P, n)
    var_se: np.ndarray
    lag_cov: np.ndarray                # (P, n_cp, n_cp)
    lag_cov_se: np.ndarray
    u_mean: np.ndarray                 # (P, P, n): target a, source b
    u_mean_se: np.ndarray
    u_cov: np.ndarray                  # (P, P, n_cp, n_cp)
    u_cov_se: np.ndarray
    vu_corr: np.ndarray                # (P, P, n_cp): corr(V_i(t), U_ib(t)), i in a
    trials: int


def _trial_rng(seed: int, trial_index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(trial_index + 1,))
    return np.random.Generator(np.random.Philox(ss))


def _pop_slices(sizes) -> list[slice]:
    edges = np.concatenate([[0], np.cumsum(sizes)])
    return [slice(int(edges[b]), int(edges[b + 1])) for b in range(len(sizes))]


def sample_weights(stats: ConnectivityStats, sizes, rng: np.random.Generator) -> np.ndarray:
    """Frozen Gaussian couplings: J_ij ~ N(jbar_ab / N_b, (sigma_ab / sqrt(N_b))^2)
    with a = pop(i), b = pop(j); one draw per matrix entry in fixed order."""
    sizes = np.asarray(sizes, dtype=int)
    n_b = sizes.astype(float)
    mean = np.repeat(np.repeat(stats.j_bar / n_b[None, :], sizes, axis=0), sizes, axis=1)
    sd = np.repeat(np.repeat(stats.sigma / np.sqrt(n_b)[None, :], sizes, axis=0), sizes, axis=1)
    n = int(sizes.sum())
    return mean + sd * rng.standard_normal((n, n))


def simulate_network(spec: NetworkSpec, grid: TimeGrid, weights: np.ndarray,
                     mc: McConfig, trial_index: int = 0,
                     rng: np.random.Generator | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Euler-Maruyama trajectories of the network SDE, subsampled onto the grid.

    Returns (voltages (N, n), currents (N, P, n)). The substep count per grid
    step is round(dt/dt_sde), at least 1. With rng=None a fresh stream for
    (mc.seed, trial_index) is used, after skipping the weight draw so a
    standalone call reproduces the corresponding in-ensemble trial.
    """
    if rng is None:
        rng = _trial_rng(mc.seed, trial_index)
        if mc.resample_weights_per_trial:
            n_tot = int(sum(mc.sizes))
            rng.standard_normal((n_tot, n_tot))      # keep stream aligned with run_ensemble
    sizes = np.asarray(mc.sizes, dtype=int)
    p = spec.n_pops
    if weights.shape != (sizes.sum(), sizes.sum()):
        raise ValueError("weight matrix does not match population sizes")
    slices = _pop_slices(sizes)
    n_tot = int(sizes.sum())

    tau_vec = np.repeat(spec.taus, sizes)
    f_vec = np.repeat(spec.noise_amplitudes, sizes)
    sigmoids = [q.sigmoid for q in spec.populations]
    inputs = [q.input for q in spec.populations]

    n_sub = max(1, int(round(grid.dt / mc.dt_sde)))
    dt = grid.dt / n_sub
    sq_dt = np.sqrt(dt)
    sub_times = grid.t0 + dt * np.arange((grid.n - 1) * n_sub)
    i_table = np.stack([np.asarray(inputs[b](sub_times), dtype=float) for b in range(p)])

    v = spec.initial_mean.repeat(sizes) + \
        np.sqrt(spec.initial_variance).repeat(sizes) * rng.standard_normal(n_tot)
    volt = np.empty((n_tot, grid.n))
    curr = np.empty((n_tot, p, grid.n))
    s_vals = np.empty(n_tot)

    def interaction(state):
        for b in range(p):
            s_vals[slices[b]] = sigmoids[b](state[slices[b]])
        return np.stack([weights[:, slices[b]] @ s_vals[slices[b]] for b in range(p)], axis=1)

    u = interaction(v)
    step = 0
    for j in range(grid.n):
        volt[:, j] = v
        curr[:, :, j] = u
        if not np.all(np.isfinite(v)):
            bad = int(np.argwhere(~np.isfinite(v))[0][0])
            raise NumericalError(f"non-finite voltage (neuron {bad}) at grid step {j}")
        if j == grid.n - 1:
            break
        for _ in range(n_sub):
            i_vec = np.repeat(i_table[:, step], sizes)
            drift = -v / tau_vec + u.sum(axis=1) + i_vec
            v = v + dt * drift + f_vec * sq_dt * rng.standard_normal(n_tot)
            step += 1
            u = interaction(v)
    return volt, curr


def run_ensemble(spec: NetworkSpec, grid: TimeGrid, mc: McConfig,
                 threads: int = 1) -> McEnsemble:
    """Simulate all trials; weights are redrawn per trial unless frozen, in
    which case the shared matrix comes from the (seed, spawn_key=0) stream."""
    validate_spec(spec)
    if len(mc.sizes) != spec.n_pops:
        raise ValueError("sizes must give one entry per population")
    frozen_weights = None
    if not mc.resample_weights_per_trial:
        rng0 = np.random.Generator(np.random.Philox(
            np.random.SeedSequence(entropy=mc.seed, spawn_key=(0,))))
        frozen_weights = sample_weights(spec.connectivity, mc.sizes, rng0)

    def one_trial(r):
        rng = _trial_rng(mc.seed, r)
        if mc.resample_weights_per_trial:
            w = sample_weights(spec.connectivity, mc.sizes, rng)
        else:
            w = frozen_weights
        volt, curr = simulate_network(spec, grid, w, mc, trial_index=r, rng=rng)
        return w, volt, curr

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(one_trial, range(mc.trials)))
    else:
        results = [one_trial(r) for r in range(mc.trials)]

    ens = McEnsemble(spec=spec, grid=grid, config=mc)
    for w, volt, curr in results:
        ens.weights.append(w)
        ens.voltages.append(volt)
        ens.currents.append(curr)
    return ens


def _se(per_trial: np.ndarray) -> np.ndarray:
    """Standard error of the across-trial mean; axis 0 indexes trials."""
    r = per_trial.shape[0]
    return per_trial.std(axis=0, ddof=1) / np.sqrt(r)


def default_checkpoints(n: int, count: int = 10) -> np.ndarray:
    return np.unique(np.linspace(1, n - 1, min(count, n - 1)).round().astype(int))


def empirical_moments(ens: McEnsemble, checkpoints: np.ndarray | None = None) -> EmpiricalMoments:
    """Across-trial estimators; within a trial, statistics pool the
    exchangeable neurons of each population."""
    mc, grid, spec = ens.config, ens.grid, ens.spec
    r, p, n = mc.trials, spec.n_pops, grid.n
    if checkpoints is None:
        checkpoints = default_checkpoints(n)
    cps = np.asarray(checkpoints, dtype=int)
    ncp = len(cps)
    slices = _pop_slices(mc.sizes)

    t_mean = np.empty((r, p, n))
    t_var = np.empty((r, p, n))
    t_lag = np.empty((r, p, ncp, ncp))
    t_umean = np.empty((r, p, p, n))
    t_ucov = np.empty((r, p, p, ncp, ncp))
    t_vucorr = np.empty((r, p, p, ncp))
    for k in range(r):
        volt, curr = ens.voltages[k], ens.currents[k]
        for a in range(p):
            block = volt[slices[a]]                      # (Na, n)
            na = block.shape[0]
            t_mean[k, a] = block.mean(axis=0)
            t_var[k, a] = block.var(axis=0, ddof=1) if na > 1 else 0.0
            cp_block = block[:, cps]
            centered = cp_block - cp_block.mean(axis=0)
            denom = max(na - 1, 1)
            t_lag[k, a] = centered.T @ centered / denom
            ub = curr[slices[a]]                         # (Na, P, n)
            t_umean[k, a] = ub.mean(axis=0)
            for b in range(p):
                ucp = ub[:, b, :][:, cps]
                ucent = ucp - ucp.mean(axis=0)
                t_ucov[k, a, b] = ucent.T @ ucent / denom
                # voltage of one neuron against the current onto a *different*
                # neuron (cyclic pairing): the across-neuron correlation that
                # vanishes in the large-N limit. Same-neuron pairing would
                # instead measure the O(1) drive correlation.
                ushift = np.roll(ucent, -1, axis=0) if na > 1 else ucent * 0.0
                num = (centered * ushift).sum(axis=0)
                den = np.sqrt((centered ** 2).sum(axis=0) * (ushift ** 2).sum(axis=0))
                t_vucorr[k, a, b] = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)

    return EmpiricalMoments(
        times=grid.times,
        checkpoints=cps,
        mean=t_mean.mean(axis=0), mean_se=_se(t_mean),
        var=t_var.mean(axis=0), var_se=_se(t_var),
        lag_cov=t_lag.mean(axis=0), lag_cov_se=_se(t_lag),
        u_mean=t_umean.mean(axis=0), u_mean_se=_se(t_umean),
        u_cov=t_ucov.mean(axis=0), u_cov_se=_se(t_ucov),
        vu_corr=t_vucorr.mean(axis=0),
        trials=r,
    )


def _z(diff: np.ndarray, se: np.ndarray) -> np.ndarray:
    """|diff|/se with the 0/0 case resolved to 0 (identical inputs score 0)."""
    diff = np.abs(diff)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(diff == 0, 0.0, diff / np.where(se > 0, se, np.nan))
    return np.where(np.isnan(z) & (diff > 0), np.inf, np.nan_to_num(z, nan=0.0, posinf=np.inf))


def interaction_reference(spec: NetworkSpec, state: MomentState,
                          cps: np.ndarray, rule: GhRule) -> tuple[np.ndarray, np.ndarray]:
    """Mean-field prediction for the interaction currents: jbar_ab * m_b(t)
    on the full grid and sigma_ab^2 * Delta_b(t, s) at the checkpoint pairs.
    Returns (u_mean (P, P, n), u_cov (P, P, ncp, ncp))."""
    jb, sg = spec.connectivity.j_bar, spec.connectivity.sigma
    p = state.mu.shape[0]
    m = np.stack([gauss_expect(spec.populations[b].sigmoid, state.mu[b],
                               np.maximum(state.v[b], 0.0), rule) for b in range(p)])
    u_mean = jb[:, :, None] * m[None, :, :]
    u_cov = np.empty((p, p, len(cps), len(cps)))
    for b in range(p):
        vb = np.maximum(state.v[b], 0.0)
        for xi, i in enumerate(cps):
            for xj, j in enumerate(cps):
                stats = BivariateGaussianStats(
                    mu_u=state.mu[b, i], mu_v=state.mu[b, j],
                    v_u=vb[i], v_v=vb[j], c_uv=state.cov[b][i, j])
                d = delta_kernel(spec.populations[b].sigmoid, stats, rule)
                u_cov[:, b, xi, xj] = sg[:, b] ** 2 * d
    return u_mean, u_cov


def compare_mc_mf(spec: NetworkSpec, moments: EmpiricalMoments, state: MomentState,
                  rule: GhRule | None = None) -> dict:
    """Per-quantity z-scores |MC - MF| / SE at the moment checkpoints."""
    rule = rule or gh_rule(DEFAULT_ORDER)
    spec_mu, spec_v = state.mu, state.v
    cps = moments.checkpoints
    p = spec_mu.shape[0]

    z_mean = _z(moments.mean[:, cps] - spec_mu[:, cps], moments.mean_se[:, cps])
    z_var = _z(moments.var[:, cps] - spec_v[:, cps], moments.var_se[:, cps])
    mf_lag = np.stack([state.cov[a][np.ix_(cps, cps)] for a in range(p)])
    z_lag = _z(moments.lag_cov - mf_lag, moments.lag_cov_se)
    mf_umean, mf_ucov = interaction_reference(spec, state, cps, rule)
    z_umean = _z(moments.u_mean[:, :, cps] - mf_umean[:, :, cps],
                 moments.u_mean_se[:, :, cps])
    z_ucov = _z(moments.u_cov - mf_ucov, moments.u_cov_se)

    zs = {"mean": z_mean, "var": z_var, "lag_cov": z_lag,
          "u_mean": z_umean, "u_cov": z_ucov}
    return {
        "checkpoints": cps.tolist(),
        "times": moments.times[cps].tolist(),
        "z_mean": z_mean.tolist(),
        "z_var": z_var.tolist(),
        "z_lag_cov": z_lag.tolist(),
        "z_u_mean": z_umean.tolist(),
        "z_u_cov": z_ucov.tolist(),
        "max_z_mean": float(z_mean.max()),
        "max_z_var": float(z_var.max()),
        "max_z_lag_cov": float(z_lag.max()),
        "max_z_u_mean": float(z_umean.max()),
        "max_z_u_cov": float(z_ucov.max()),
        "max_z": float(max(z.max() for z in zs.values())),
        "vu_corr_max_abs": float(np.abs(moments.vu_corr).max()),
        "vu_corr_mean": float(moments.vu_corr.mean()),
    }
