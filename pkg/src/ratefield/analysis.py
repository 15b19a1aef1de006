"""Linear stability of the two-population symmetric fixed point, oscillation
detection, and parameter sweeps (gain, coupling scale, noise scale)."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .meanfield import solve_fixed_point, wilson_cowan_solve
from .model import (NetworkSpec, TimeGrid, default_grid, scale_connectivity,
                    with_gain_spec)
from .quadrature import DEFAULT_ORDER, GhRule, gh_rule
from .stationary import check_stationary_preconditions

SWEEP_PARAMETERS = ("g", "sigma_scale", "f_scale", "j_scale")


# ---------------------------------------------------------------------------
# Two-population linearization at the symmetric fixed point
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class JacobianEigs:
    lam: tuple[complex, complex]        # eigenvalues of the coupling matrix
    system: tuple[complex, complex]     # -1/tau + g * lam


def _check_two_pop(j_bar: np.ndarray) -> np.ndarray:
    j = np.atleast_2d(np.asarray(j_bar, dtype=float))
    if j.shape != (2, 2):
        raise ValueError("two-population analysis needs a 2x2 coupling matrix")
    return j


def jacobian_eigs(j_bar: np.ndarray, tau: float, g: float) -> JacobianEigs:
    """Closed-form eigenvalues of the 2x2 coupling matrix and of the
    linearized rate system -1/tau + g*lambda."""
    j = _check_two_pop(j_bar)
    tr_half = 0.5 * (j[0, 0] + j[1, 1])
    disc = (j[0, 0] - j[1, 1]) ** 2 + 4.0 * j[0, 1] * j[1, 0]
    root = np.sqrt(complex(disc)) / 2.0
    lam = (tr_half + root, tr_half - root)
    lam = tuple(x.real + 0j if x.imag == 0 else x for x in lam)
    return JacobianEigs(lam=lam, system=tuple(-1.0 / tau + g * x for x in lam))


def is_feedback_loop(j_bar: np.ndarray) -> bool:
    """Complex eigenvalue condition: j12*j21 < -(j11 - j22)^2 / 4."""
    j = _check_two_pop(j_bar)
    return bool(j[0, 1] * j[1, 0] < -0.25 * (j[0, 0] - j[1, 1]) ** 2)


def hopf_threshold(j_bar: np.ndarray, tau: float) -> tuple[float | None, str | None]:
    """Critical gain 2/(tau*(j11+j22)) for loss of stability of the symmetric
    fixed point, or (None, reason) when the oscillatory instability cannot
    occur (no complex pair, or non-positive self-interaction trace)."""
    j = _check_two_pop(j_bar)
    if not is_feedback_loop(j):
        return None, "no complex eigenvalue pair"
    trace = j[0, 0] + j[1, 1]
    if trace <= 0:
        return None, "non-positive trace"
    return 2.0 / (tau * trace), None


def h_factor(v: float, rule: GhRule | None = None) -> float:
    """Gain attenuation of the tanh nonlinearity under Gaussian smearing:
    1 - E[tanh^2(sqrt(v) X)]. Equals 1 at v = 0 and decreases with v."""
    if v < 0:
        raise ValueError("variance must be non-negative")
    if v == 0:
        return 1.0
    rule = rule or gh_rule(DEFAULT_ORDER)
    return float(1.0 - np.tanh(np.sqrt(v) * rule.nodes) ** 2 @ rule.weights)


@dataclass(frozen=True)
class HopfAnalysis:
    eigenvalues: tuple[complex, complex]
    system_eigenvalues: tuple[complex, complex]
    g_c: float | None
    g_c_reason: str | None
    is_feedback_loop: bool
    h_of_v: float


def hopf_analysis(j_bar: np.ndarray, tau: float, g: float, v: float = 0.0,
                  rule: GhRule | None = None) -> HopfAnalysis:
    eigs = jacobian_eigs(j_bar, tau, g)
    g_c, reason = hopf_threshold(j_bar, tau)
    return HopfAnalysis(
        eigenvalues=eigs.lam,
        system_eigenvalues=eigs.system,
        g_c=g_c,
        g_c_reason=reason,
        is_feedback_loop=is_feedback_loop(j_bar),
        h_of_v=h_factor(v, rule),
    )


# ---------------------------------------------------------------------------
# Oscillation detection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Oscillation:
    amplitude: float
    period: float


def detect_oscillation(times: np.ndarray, values: np.ndarray, burn_in: float,
                       amp_threshold: float = 1e-4) -> Oscillation | None:
    """Amplitude (max-min)/2 and mean peak spacing after the burn-in.

    Peak positions are refined by parabolic interpolation. Returns None when
    the residual amplitude is below amp_threshold or no repeated maxima exist
    (decayed transients, drifts, constants).
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    keep = times >= times[0] + burn_in
    if keep.sum() < 8:
        raise ValueError("series too short after burn-in")
    t, y = times[keep], values[keep]
    amplitude = 0.5 * (y.max() - y.min())
    if amplitude < amp_threshold:
        return None
    interior = np.where((y[1:-1] > y[:-2]) & (y[1:-1] >= y[2:]))[0] + 1
    if len(interior) < 2:
        return None
    peak_t = []
    dt = t[1] - t[0]
    for k in interior:
        denom = y[k - 1] - 2.0 * y[k] + y[k + 1]
        shift = 0.5 * (y[k - 1] - y[k + 1]) / denom if denom != 0 else 0.0
        peak_t.append(t[k] + np.clip(shift, -0.5, 0.5) * dt)
    period = float(np.mean(np.diff(peak_t)))
    return Oscillation(amplitude=float(amplitude), period=period)


# ---------------------------------------------------------------------------
# Parameter sweeps
# ---------------------------------------------------------------------------

def apply_parameter(spec: NetworkSpec, parameter: str, value: float) -> NetworkSpec:
    if parameter == "g":
        return with_gain_spec(spec, value)
    if parameter == "sigma_scale":
        return scale_connectivity(spec, sigma_scale=value)
    if parameter == "j_scale":
        return scale_connectivity(spec, j_scale=value)
    if parameter == "f_scale":
        return scale_connectivity(spec, f_scale=value)
    raise ValueError(f"unknown sweep parameter {parameter!r}; "
                     f"expected one of {SWEEP_PARAMETERS}")


@dataclass
class SweepPoint:
    value: float
    mean_plus: np.ndarray | None = None      # asymptotic mean, +offset start
    mean_minus: np.ndarray | None = None     # asymptotic mean, -offset start
    c0: np.ndarray | None = None             # asymptotic variance
    amplitude: np.ndarray | None = None
    period: np.ndarray | None = None
    regime: str = "n/a"
    converged: bool = False
    error: str | None = None


@dataclass
class SweepResult:
    parameter: str
    values: np.ndarray
    points: list[SweepPoint]


def _asymptotic_window(grid: TimeGrid) -> np.ndarray:
    # Fig-style time average over [T1, T2] with T1 at 3/4 of the horizon
    return grid.times >= grid.t0 + 0.75 * (grid.t_end - grid.t0)


def _sweep_point(spec: NetworkSpec, parameter: str, value: float,
                 grid: TimeGrid | None, ic_offset: float,
                 regime_threshold: float, solver_kwargs: dict) -> SweepPoint:
    point = SweepPoint(value=float(value))
    try:
        sp = apply_parameter(spec, parameter, value)
        g = grid or default_grid(sp, t_end=30.0 * max(q.tau for q in sp.populations),
                                 steps_per_tau=40)
        window = _asymptotic_window(g)
        p = sp.n_pops
        branches = {}
        converged = True
        for sign, key in ((+1.0, "plus"), (-1.0, "minus")):
            sp_b = replace(sp, initial_mean=np.full(p, sign * ic_offset))
            state, report = solve_fixed_point(sp_b, g, **solver_kwargs)
            converged = converged and report.converged
            branches[key] = state
        point.mean_plus = branches["plus"].mu[:, window].mean(axis=1)
        point.mean_minus = branches["minus"].mu[:, window].mean(axis=1)
        point.c0 = np.maximum(branches["plus"].v, 0.0)[:, window].mean(axis=1)
        amps = np.full(p, np.nan)
        periods = np.full(p, np.nan)
        burn = 0.75 * (g.t_end - g.t0)
        for a in range(p):
            osc = detect_oscillation(g.times, branches["plus"].mu[a], burn_in=burn)
            if osc is not None:
                amps[a], periods[a] = osc.amplitude, osc.period
        point.amplitude, point.period = amps, periods
        ok, _ = check_stationary_preconditions(sp)
        if ok:
            point.regime = "chaotic" if point.c0.max() > regime_threshold else "trivial"
        point.converged = converged
    except Exception as exc:                      # record and keep sweeping
        point.error = f"{type(exc).__name__}: {exc}"
    return point


def sweep(spec: NetworkSpec, parameter: str, values, grid: TimeGrid | None = None,
          *, ic_offset: float = 0.1, regime_threshold: float = 1e-2,
          threads: int = 1, **solver_kwargs) -> SweepResult:
    """Solve the fixed point across a parameter grid; each point runs two
    solves started from initial means +-ic_offset so symmetry-broken branches
    (pitchforks) are visible in the asymptotic means."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("sweep grid is empty")
    if np.any(np.diff(values) <= 0):
        raise ValueError("sweep grid must be strictly increasing")
    args = [(spec, parameter, v, grid, ic_offset, regime_threshold, solver_kwargs)
            for v in values]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            points = list(ex.map(lambda a: _sweep_point(*a), args))
    else:
        points = [_sweep_point(*a) for a in args]
    return SweepResult(parameter=parameter, values=values, points=points)


def branch_split_value(result: SweepResult, threshold: float = 1e-3) -> float | None:
    """Smallest swept value whose +/- branches separate beyond threshold."""
    for point in result.points:
        if point.error is None and point.mean_plus is not None:
            if np.max(np.abs(point.mean_plus - point.mean_minus)) > threshold:
                return float(point.value)
    return None
