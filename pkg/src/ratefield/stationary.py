"""Stationary statistics of long-horizon solves and the trivial/chaotic split.

For constant inputs the converged covariance depends (after a burn-in that
forgets the initial condition) only on the time lag; the profile extractor
averages C(t, t-lag) over admissible t and records the spread of the values
being averaged as a stationarity defect.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .model import (Constant, NetworkSpec, PiecewiseConstant, Sinusoid,
                    TimeGrid, with_gain_spec)
from .meanfield import MomentState, solve_fixed_point


class Regime(Enum):
    TRIVIAL = "trivial"
    CHAOTIC = "chaotic"


class UnbracketedTransitionError(ValueError):
    """The supplied gain bracket does not straddle the trivial/chaotic split."""


@dataclass(frozen=True)
class StationaryProfile:
    """Lagged covariance after burn-in: c[a, k] estimates C_aa(lag = k*dt)."""

    taus: np.ndarray            # lag grid, starting at 0
    c: np.ndarray               # (P, L) per-population lag profile
    c0: np.ndarray              # variance at lag 0, per population
    defect_per_tau: np.ndarray  # spread of superposed values at each lag
    defect: float               # max over lags and populations
    burn_in: float


def check_stationary_preconditions(spec: NetworkSpec) -> tuple[bool, list[str]]:
    """Constant inputs and positive time constants; the leak matrix
    diag(-1/tau) then has full rank with strictly negative eigenvalues."""
    reasons = []
    for i, pop in enumerate(spec.populations):
        sig = pop.input
        constant = isinstance(sig, Constant) \
            or (isinstance(sig, Sinusoid) and sig.amplitude == 0.0) \
            or (isinstance(sig, PiecewiseConstant) and len(sig.breakpoints) == 0)
        if not constant:
            reasons.append(f"populations[{i}].input: non-constant input")
        if not pop.tau > 0:
            reasons.append(f"populations[{i}].tau: non-positive time constant")
    return (not reasons, reasons)


def extract_profile(state: MomentState, burn_in: float,
                    tau_max: float | None = None) -> StationaryProfile:
    """Average C(t, t-lag) over all t with t-lag past the burn-in.

    tau_max defaults to half the post-burn-in window so every lag keeps a
    healthy number of superposed samples.
    """
    grid = state.grid
    horizon = grid.t_end - grid.t0
    if burn_in >= horizon:
        raise ValueError("burn_in exceeds the solve horizon")
    i0 = int(np.ceil(burn_in / grid.dt - 1e-9))
    if tau_max is None:
        tau_max = 0.5 * (horizon - burn_in)
    n_lag = min(int(np.floor(tau_max / grid.dt + 1e-9)) + 1, grid.n - i0)
    if n_lag < 1:
        raise ValueError("burn_in too large for the requested lag range")

    p = state.mu.shape[0]
    c = np.empty((p, n_lag))
    spread = np.zeros((p, n_lag))
    for a in range(p):
        for k in range(n_lag):
            vals = np.diagonal(state.cov[a], offset=k)[i0:]
            c[a, k] = vals.mean()
            spread[a, k] = vals.max() - vals.min()
    return StationaryProfile(
        taus=grid.dt * np.arange(n_lag),
        c=c,
        c0=c[:, 0].copy(),
        defect_per_tau=spread.max(axis=0),
        defect=float(spread.max()),
        burn_in=float(burn_in),
    )


def classify_regime(profile: StationaryProfile, threshold: float = 1e-2) -> Regime:
    """Chaotic iff the stationary variance C(0) exceeds the threshold."""
    return Regime.CHAOTIC if float(profile.c0.max()) > threshold else Regime.TRIVIAL


def classify_gain(spec: NetworkSpec, g: float, grid: TimeGrid, *,
                  burn_in: float | None = None, threshold: float = 1e-2,
                  **solver_kwargs) -> tuple[Regime, StationaryProfile, bool]:
    """Solve the spec at sigmoid gain g and classify the stationary regime."""
    sg = with_gain_spec(spec, g)
    if burn_in is None:
        burn_in = min(20.0 * max(p.tau for p in sg.populations),
                      0.5 * (grid.t_end - grid.t0))
    state, report = solve_fixed_point(sg, grid, **solver_kwargs)
    profile = extract_profile(state, burn_in)
    return classify_regime(profile, threshold), profile, report.converged


def find_gc(spec: NetworkSpec, g_low: float, g_high: float, tol_g: float = 0.25,
            *, grid: TimeGrid, burn_in: float | None = None,
            threshold: float = 1e-2, log=None, **solver_kwargs) -> float:
    """Bisection on the sigmoid gain for the trivial-to-chaotic transition.

    Requires g_low to classify Trivial and g_high Chaotic; returns the
    bracket midpoint once its width drops below tol_g.
    """
    def classify(g):
        regime, profile, _ = classify_gain(spec, g, grid, burn_in=burn_in,
                                           threshold=threshold, **solver_kwargs)
        if log is not None:
            log(g, regime, float(profile.c0.max()))
        return regime

    if classify(g_low) is not Regime.TRIVIAL:
        raise UnbracketedTransitionError(f"g_low={g_low} does not classify as trivial")
    if classify(g_high) is not Regime.CHAOTIC:
        raise UnbracketedTransitionError(f"g_high={g_high} does not classify as chaotic")
    lo, hi = float(g_low), float(g_high)
    while hi - lo > tol_g:
        mid = 0.5 * (lo + hi)
        if classify(mid) is Regime.CHAOTIC:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)
