"""The fixed-point map on (mean, covariance) pairs and its iteration.

One application of the map takes a Gaussian process X, given by its mean
mu_a(t) and per-population covariance C_aa(t,s) on a uniform grid, to the
process Y with

    mean:  dmu_a/dt = -mu_a/tau_a + sum_b jbar_ab E[S_b(N(mu_b, v_b^X(t)))] + I_a(t)
    cov:   C_aa(t,s) = OU_a(t,s) + sum_b sigma_ab^2 H_ab(t,s)

where OU is the closed-form external-noise (Ornstein-Uhlenbeck) contribution
and H is the double exponential-kernel integral of the second-moment kernel
Delta_b, built by first-order recursions in (t, s). The mean ODE is integrated
by classical RK4 with the sigmoid argument's variance taken from X (linearly
interpolated at half steps) and the mean taken self-consistently at the RK4
stage values; at the fixed point the two conventions coincide, and this choice
makes the zero-noise solve agree with the plain Wilson-Cowan integrator to
machine precision instead of O(dt^2).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .model import ErfForm, NetworkSpec, TimeGrid, validate_spec
from .quadrature import (DEFAULT_ORDER, GhRule, delta_matrix, erf_delta_matrix,
                         erf_mean_closed, gauss_expect, gh_rule)


class NumericalError(RuntimeError):
    """Non-finite value produced during a solve; message carries the grid index."""


@dataclass(frozen=True)
class MomentState:
    """Mean and covariance of a P-population Gaussian process on a grid.

    mu has shape (P, n); cov has shape (P, n, n) with each slice exactly
    symmetric (built from one triangle). Cross-population covariances are
    identically zero and not stored.
    """

    grid: TimeGrid
    mu: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mu.setflags(write=False)
        self.cov.setflags(write=False)

    @property
    def v(self) -> np.ndarray:
        """Per-population variance track, shape (P, n)."""
        return np.einsum("aii->ai", self.cov)


@dataclass
class SolveReport:
    iterations: int
    residual_history: list[float]
    residual_mu: list[float]
    residual_cov: list[float]
    converged: bool
    tol_mean: float
    tol_cov: float
    bound_estimate: float
    contraction_ratio: float | None

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "residual_history": self.residual_history,
            "residual_mu": self.residual_mu,
            "residual_cov": self.residual_cov,
            "converged": self.converged,
            "tol_mean": self.tol_mean,
            "tol_cov": self.tol_cov,
            "bound_estimate": self.bound_estimate,
            "contraction_ratio": self.contraction_ratio,
        }


# ---------------------------------------------------------------------------
# Ornstein-Uhlenbeck covariance (closed form)
# ---------------------------------------------------------------------------

def ou_covariance(tau: float, f: float, v0: float, t: float, s: float) -> float:
    """exp(-(t+s)/tau) [v0 + (tau f^2 / 2)(exp(2s/tau) - 1)] for 0 <= s <= t.

    Times are elapsed since the initial condition. Evaluated in the
    overflow-safe difference form.
    """
    if s > t:
        raise ValueError("require s <= t (symmetric in exact arithmetic; callers order args)")
    if s < 0 or tau <= 0 or f < 0 or v0 < 0:
        raise ValueError("require tau > 0, f >= 0, v0 >= 0, 0 <= s <= t")
    return v0 * np.exp(-(t + s) / tau) + 0.5 * tau * f * f * (
        np.exp(-(t - s) / tau) - np.exp(-(t + s) / tau))


def ou_covariance_matrix(tau: float, f: float, v0: float, elapsed: np.ndarray) -> np.ndarray:
    """Full symmetric OU covariance matrix over elapsed grid times."""
    tt = elapsed[:, None] + elapsed[None, :]
    lag = np.abs(elapsed[:, None] - elapsed[None, :])
    return v0 * np.exp(-tt / tau) + 0.5 * tau * f * f * (np.exp(-lag / tau) - np.exp(-tt / tau))


# ---------------------------------------------------------------------------
# Mean integration (shared by the map and the Wilson-Cowan baseline)
# ---------------------------------------------------------------------------

def _sigmoid_mean(s, m: float, v: float, rule: GhRule, erf_closed: bool) -> float:
    if v <= 0.0:
        return float(s(m))
    if erf_closed and isinstance(s, ErfForm):
        return erf_mean_closed(s.g, s.gamma, m, v)
    return float(s(np.sqrt(v) * rule.nodes + m) @ rule.weights)


def _rk4_mean(spec: NetworkSpec, grid: TimeGrid, v_grid: np.ndarray,
              rule: GhRule, *, j_bar: np.ndarray | None = None,
              erf_closed: bool = True) -> np.ndarray:
    """RK4 integration of the coupled mean ODE with exogenous variance track.

    v_grid is (P, n); half-step variances are linear interpolants. Passing
    j_bar overrides the spec coupling (zeros give the pure input convolution).
    """
    times = grid.times
    n, h = grid.n, grid.dt
    pops = spec.populations
    p = len(pops)
    jb = spec.connectivity.j_bar if j_bar is None else j_bar
    taus = spec.taus
    sigmoids = [q.sigmoid for q in pops]

    i_grid = np.stack([q.input(times) for q in pops])
    i_half = np.stack([q.input(times[:-1] + 0.5 * h) for q in pops])
    v_half = 0.5 * (v_grid[:, :-1] + v_grid[:, 1:])

    coupled = np.any(jb != 0.0)

    def rhs(y, v_col, i_col):
        if coupled:
            m = np.array([_sigmoid_mean(sigmoids[b], y[b], v_col[b], rule, erf_closed)
                          for b in range(p)])
            return -y / taus + jb @ m + i_col
        return -y / taus + i_col

    mu = np.empty((p, n))
    y = spec.initial_mean.astype(float).copy()
    mu[:, 0] = y
    for i in range(n - 1):
        k1 = rhs(y, v_grid[:, i], i_grid[:, i])
        k2 = rhs(y + 0.5 * h * k1, v_half[:, i], i_half[:, i])
        k3 = rhs(y + 0.5 * h * k2, v_half[:, i], i_half[:, i])
        k4 = rhs(y + h * k3, v_grid[:, i + 1], i_grid[:, i + 1])
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        mu[:, i + 1] = y
    return mu


def wilson_cowan_solve(spec: NetworkSpec, grid: TimeGrid,
                       rule: GhRule | None = None) -> np.ndarray:
    """Deterministic rate equations (noise and coupling dispersion ignored):
    dV_a/dt = -V_a/tau_a + sum_b jbar_ab S_b(V_b) + I_a. Returns (P, n) means."""
    validate_spec(spec)
    rule = rule or gh_rule(DEFAULT_ORDER)
    v_zero = np.zeros((spec.n_pops, grid.n))
    return _rk4_mean(spec, grid, v_zero, rule)


# ---------------------------------------------------------------------------
# Covariance machinery: H/D recursions
# ---------------------------------------------------------------------------

def _h_matrix(delta: np.ndarray, dt: float, tau: float) -> np.ndarray:
    """Double exponential-kernel integral of delta via the first-order
    recursions: D marches in s along rows, H marches in t with the diagonal
    updated at twice the decay rate; the upper triangle is filled by symmetry."""
    n = delta.shape[0]
    decay = 1.0 - dt / tau
    d = lfilter([0.0, dt], [1.0, -decay], delta, axis=1)
    h = np.zeros((n, n))
    decay2 = 1.0 - 2.0 * dt / tau
    for i in range(n - 1):
        h[i + 1, : i + 1] = h[i, : i + 1] * decay + d[i, : i + 1] * dt
        h[i + 1, i + 1] = h[i, i] * decay2 + 2.0 * d[i, i] * dt
    return h + np.tril(h, -1).T


def _delta_for_pop(spec: NetworkSpec, b: int, mu_b: np.ndarray, v_b: np.ndarray,
                   cov_b: np.ndarray, rule: GhRule, erf_closed: bool,
                   mehler_terms: int, delta_tol: float) -> np.ndarray:
    s = spec.populations[b].sigmoid
    if erf_closed and isinstance(s, ErfForm):
        return erf_delta_matrix(s.g, s.gamma, mu_b, v_b, cov_b, rule)
    return delta_matrix(s, mu_b, v_b, cov_b, rule,
                        n_terms=mehler_terms, fallback_tol=delta_tol)


# ---------------------------------------------------------------------------
# The map and its fixed-point iteration
# ---------------------------------------------------------------------------

def initial_state(spec: NetworkSpec, grid: TimeGrid, rule: GhRule | None = None) -> MomentState:
    """Zero-interaction process: input-convolution mean, pure OU covariance."""
    rule = rule or gh_rule(DEFAULT_ORDER)
    p = spec.n_pops
    elapsed = grid.times - grid.t0
    mu = _rk4_mean(spec, grid, np.zeros((p, grid.n)), rule,
                   j_bar=np.zeros((p, p)))
    cov = np.stack([
        ou_covariance_matrix(q.tau, q.f, spec.initial_variance[a], elapsed)
        for a, q in enumerate(spec.populations)
    ])
    return MomentState(grid=grid, mu=mu, cov=cov)


def apply_F(spec: NetworkSpec, state: MomentState, rule: GhRule | None = None, *,
            erf_closed: bool = True, mehler_terms: int = 60,
            delta_tol: float = 1e-8) -> MomentState:
    """One application of the map to the Gaussian process `state`."""
    rule = rule or gh_rule(DEFAULT_ORDER)
    grid = state.grid
    if state.mu.shape != (spec.n_pops, grid.n):
        raise ValueError("grid mismatch between spec and state")
    p, n = state.mu.shape
    elapsed = grid.times - grid.t0
    sigma = spec.connectivity.sigma
    v_x = np.maximum(state.v, 0.0)

    mu_y = _rk4_mean(spec, grid, v_x, rule, erf_closed=erf_closed)
    if not np.all(np.isfinite(mu_y)):
        bad = int(np.argwhere(~np.isfinite(mu_y))[0][1])
        raise NumericalError(f"non-finite mean at grid index {bad}")

    needed = [b for b in range(p) if np.any(sigma[:, b] != 0.0)]
    deltas = {
        b: _delta_for_pop(spec, b, state.mu[b], v_x[b], state.cov[b], rule,
                          erf_closed, mehler_terms, delta_tol)
        for b in needed
    }

    cov_y = np.empty_like(state.cov)
    for a, q in enumerate(spec.populations):
        c = ou_covariance_matrix(q.tau, q.f, spec.initial_variance[a], elapsed)
        for b in needed:
            if sigma[a, b] != 0.0:
                c = c + sigma[a, b] ** 2 * _h_matrix(deltas[b], grid.dt, q.tau)
        if not np.all(np.isfinite(c)):
            bad = int(np.argwhere(~np.isfinite(c))[0][0])
            raise NumericalError(f"non-finite covariance at grid index {bad}")
        # the first-order recursions are O(dt^2) inconsistent between the
        # diagonal and off-diagonal updates; restore the exact-process
        # guarantees (non-negative variance, Cauchy-Schwarz) by clipping
        d = np.einsum("ii->i", c)
        np.maximum(d, 0.0, out=d)
        bound = np.sqrt(np.outer(d, d))
        np.clip(c, -bound, bound, out=c)
        cov_y[a] = c
    return MomentState(grid=grid, mu=mu_y, cov=cov_y)


def solve_fixed_point(spec: NetworkSpec, grid: TimeGrid,
                      tol: float | tuple[float, float] = (1e-6, 1e-5),
                      max_iter: int = 80, rule: GhRule | None = None, *,
                      erf_closed: bool = True, mehler_terms: int = 60,
                      delta_tol: float = 1e-8,
                      callback=None) -> tuple[MomentState, SolveReport]:
    """Iterate the map from the zero-interaction start until the sup-norm
    residuals of mean and covariance drop below tol = (tol_mean, tol_cov).

    Non-convergence within max_iter is reported, not raised.
    """
    validate_spec(spec)
    rule = rule or gh_rule(DEFAULT_ORDER)
    tol_mean, tol_cov = (tol, tol) if np.isscalar(tol) else tol

    state = initial_state(spec, grid, rule)
    res_mu_hist: list[float] = []
    res_cov_hist: list[float] = []
    converged = False
    for it in range(1, max_iter + 1):
        new = apply_F(spec, state, rule, erf_closed=erf_closed,
                      mehler_terms=mehler_terms, delta_tol=delta_tol)
        res_mu = float(np.max(np.abs(new.mu - state.mu)))
        res_cov = float(np.max(np.abs(new.cov - state.cov)))
        res_mu_hist.append(res_mu)
        res_cov_hist.append(res_cov)
        state = new
        if callback is not None:
            callback(it, res_mu, res_cov)
        if res_mu < tol_mean and res_cov < tol_cov:
            converged = True
            break

    combined = [max(a, b) for a, b in zip(res_mu_hist, res_cov_hist)]
    ratios = [combined[k + 1] / combined[k]
              for k in range(len(combined) - 1) if combined[k] > 0]
    contraction = float(np.median(ratios[-5:])) if ratios else None
    report = SolveReport(
        iterations=len(combined),
        residual_history=combined,
        residual_mu=res_mu_hist,
        residual_cov=res_cov_hist,
        converged=converged,
        tol_mean=float(tol_mean),
        tol_cov=float(tol_cov),
        # shape of the discretization term of the a-priori precision bound,
        # (iterations + horizon) * dt with unit constant; not certified
        bound_estimate=float((len(combined) + grid.t_end - grid.t0) * grid.dt),
        contraction_ratio=contraction,
    )
    return state, report


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------

def write_means_csv(state: MomentState, path) -> None:
    """Columns t, mu_1..mu_P at full round-trip precision."""
    p = state.mu.shape[0]
    header = "t," + ",".join(f"mu_{a + 1}" for a in range(p))
    data = np.column_stack([state.grid.times, state.mu.T])
    np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")


def write_cov_csv(state: MomentState, alpha: int, path) -> None:
    """Upper triangle (t <= s) of population alpha's covariance: columns t, s, c."""
    times = state.grid.times
    i, j = np.triu_indices(state.grid.n)
    data = np.column_stack([times[i], times[j], state.cov[alpha][i, j]])
    np.savetxt(path, data, delimiter=",", header="t,s,c", comments="", fmt="%.17g")
