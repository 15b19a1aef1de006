"""Command-line front end: config ingestion, run orchestration, artifacts.

Exit codes: 0 success, 1 invalid input, 2 non-convergence (or a failed
validation threshold), 3 internal numerical failure. Artifacts are
deterministic: identical config and seed give byte-identical CSV/JSON files
(timings go to stderr, never into artifacts).
"""

from __future__ import annotations

import json
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import __version__
from .analysis import (SWEEP_PARAMETERS, branch_split_value, detect_oscillation,
                       hopf_analysis, sweep)
from .mc import McConfig, compare_mc_mf, empirical_moments, run_ensemble
from .meanfield import (NumericalError, ou_covariance, solve_fixed_point,
                        wilson_cowan_solve, write_cov_csv, write_means_csv,
                        _h_matrix)
from .model import (ErfForm, Logistic, NetworkSpec, SpecValidationError, SqrtClassI,
                    Tanh, TimeGrid, default_grid, load_spec)
from .quadrature import (BivariateGaussianStats, delta_kernel, delta_matrix,
                         erf_delta_closed, erf_mean_closed, gauss_expect, gh_rule)
from .stationary import (check_stationary_preconditions, classify_regime,
                         extract_profile)

EXIT_OK, EXIT_INVALID, EXIT_UNCONVERGED, EXIT_NUMERICAL = 0, 1, 2, 3


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return "" if x is None else str(x)


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(x) for x in row) + "\n")


def _write_json(path: Path, payload: dict, config: dict) -> None:
    doc = {"tool": {"name": "ratefield", "version": __version__},
           "config": config, **payload}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _gain_of(sigmoid) -> float:
    if isinstance(sigmoid, (Tanh, ErfForm)):
        return float(sigmoid.g)
    if isinstance(sigmoid, Logistic):
        return 1.0 / sigmoid.v_s
    if isinstance(sigmoid, SqrtClassI):
        return float(sigmoid.c)
    raise TypeError(f"unknown sigmoid {sigmoid!r}")


class ConfigError(ValueError):
    pass


def _load_config(config_path: str, overrides: dict) -> tuple[NetworkSpec, dict]:
    """Read the run-config JSON, apply CLI overrides, resolve defaults.

    Returns the validated network spec and the fully resolved config dict
    (which is echoed into every JSON artifact)."""
    cpath = Path(config_path)
    if not cpath.is_file():
        raise ConfigError(f"config file not found: {config_path}")
    try:
        cfg = json.loads(cpath.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if "spec" not in cfg:
        raise ConfigError("config missing required key 'spec'")
    spec_path = (cpath.parent / cfg["spec"]).resolve()
    if not spec_path.is_file():
        raise ConfigError(f"network spec file not found: {spec_path}")
    spec = load_spec(spec_path)

    solver = dict(cfg.get("solver", {}))
    grid_cfg = dict(cfg.get("grid", {}))
    for key in ("dt", "t_end", "t0"):
        if overrides.get(key) is not None:
            grid_cfg[key] = overrides[key]
    if overrides.get("tol") is not None:
        solver["tol_mean"] = solver["tol_cov"] = overrides["tol"]
    if overrides.get("max_iter") is not None:
        solver["max_iter"] = overrides["max_iter"]
    if overrides.get("order") is not None:
        solver["order"] = overrides["order"]

    max_tau = max(p.tau for p in spec.populations)
    grid_explicit = bool(grid_cfg)
    t0 = float(grid_cfg.get("t0", 0.0))
    t_end = float(grid_cfg.get("t_end", t0 + 40.0 * max_tau))
    if "dt" in grid_cfg:
        grid = TimeGrid(t0, t_end, float(grid_cfg["dt"]))
    else:
        grid = default_grid(spec, t_end=t_end, t0=t0)

    mc_cfg = dict(cfg.get("mc", {}))
    if overrides.get("seed") is not None:
        mc_cfg["seed"] = overrides["seed"]

    resolved = {
        "spec": str(spec_path),
        "grid": {"t0": grid.t0, "t_end": grid.t_end, "dt": grid.dt, "n": grid.n,
                 "explicit": grid_explicit},
        "solver": {
            "tol_mean": float(solver.get("tol_mean", 1e-6)),
            "tol_cov": float(solver.get("tol_cov", 1e-5)),
            "max_iter": int(solver.get("max_iter", 80)),
            "order": int(solver.get("order", 40)),
            "erf_closed": bool(solver.get("erf_closed", True)),
        },
        "stationary": {
            "burn_in": float(cfg.get("stationary", {}).get(
                "burn_in", min(20.0 * max_tau, 0.5 * (t_end - t0)))),
            "threshold": float(cfg.get("stationary", {}).get("threshold", 1e-2)),
            "tau_max": cfg.get("stationary", {}).get("tau_max"),
        },
        "sweep": cfg.get("sweep", {}),
        "mc": mc_cfg,
        "out": overrides.get("out") or cfg.get("out", "out"),
        "threads": int(overrides.get("threads") or cfg.get("threads", 1) or 1),
    }
    return spec, resolved


def _solver_kwargs(resolved: dict) -> dict:
    s = resolved["solver"]
    return {
        "tol": (s["tol_mean"], s["tol_cov"]),
        "max_iter": s["max_iter"],
        "rule": gh_rule(s["order"]),
        "erf_closed": s["erf_closed"],
    }


def _grid_of(resolved: dict) -> TimeGrid:
    g = resolved["grid"]
    return TimeGrid(g["t0"], g["t_end"], g["dt"])


def _outdir(resolved: dict) -> Path:
    out = Path(resolved["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_err(msg: str) -> None:
    click.echo(msg, err=True)


common_options = [
    click.option("--config", "config_path", required=True, type=str,
                 help="Run configuration JSON."),
    click.option("--out", default=None, type=str, help="Output directory."),
    click.option("--dt", default=None, type=float, help="Override grid step."),
    click.option("--t-end", default=None, type=float, help="Override horizon."),
    click.option("--tol", default=None, type=float,
                 help="Override both solver tolerances."),
    click.option("--max-iter", default=None, type=int),
    click.option("--order", default=None, type=int, help="Quadrature order."),
    click.option("--seed", default=None, type=int, help="Override MC seed."),
    click.option("--threads", default=None, type=int,
                 help="Worker budget for parallel sections (0 = all cores)."),
    click.option("-v", "--verbose", is_flag=True, default=False),
]


def _with_common(f):
    for opt in reversed(common_options):
        f = opt(f)
    return f


def _prepare(config_path, out, dt, t_end, tol, max_iter, order, seed, threads):
    overrides = {"out": out, "dt": dt, "t_end": t_end, "tol": tol,
                 "max_iter": max_iter, "order": order, "seed": seed,
                 "threads": threads}
    spec, resolved = _load_config(config_path, overrides)
    if resolved["threads"] == 0:
        import os
        resolved["threads"] = os.cpu_count() or 1
    return spec, resolved


@click.group()
@click.version_option(__version__, prog_name="ratefield")
def main():
    """Mean-field solver and validation suite for stochastic rate networks."""


@main.command()
@_with_common
def solve(verbose, **opts):
    """Iterate the moment map to its fixed point; write means/covariance/report."""
    try:
        spec, resolved = _prepare(**opts)
        grid = _grid_of(resolved)
        out = _outdir(resolved)
        t_start = time.perf_counter()
        cb = (lambda k, rm, rc: _echo_err(f"iter {k}: residual mu={rm:.3e} cov={rc:.3e}")) \
            if verbose else None
        state, report = solve_fixed_point(spec, grid, callback=cb,
                                          **_solver_kwargs(resolved))
        elapsed = time.perf_counter() - t_start
        write_means_csv(state, out / "means.csv")
        for a in range(spec.n_pops):
            write_cov_csv(state, a, out / f"cov_{a + 1}.csv")
        _write_json(out / "report.json", {"report": report.to_dict()}, resolved)
        _echo_err(f"solve: {report.iterations} iterations, converged={report.converged}, "
                  f"{elapsed:.2f}s")
        sys.exit(EXIT_OK if report.converged else EXIT_UNCONVERGED)
    except (ConfigError, SpecValidationError, ValueError) as exc:
        _echo_err(f"invalid input: {exc}")
        sys.exit(EXIT_INVALID)
    except NumericalError as exc:
        _echo_err(f"numerical failure: {exc}")
        sys.exit(EXIT_NUMERICAL)


@main.command()
@_with_common
def stationary(verbose, **opts):
    """Long-horizon solve, lag profile extraction, regime classification."""
    try:
        spec, resolved = _prepare(**opts)
        ok, reasons = check_stationary_preconditions(spec)
        if not ok:
            _echo_err("stationary preconditions failed: " + "; ".join(reasons))
            sys.exit(EXIT_INVALID)
        grid = _grid_of(resolved)
        out = _outdir(resolved)
        state, report = solve_fixed_point(spec, grid, **_solver_kwargs(resolved))
        st = resolved["stationary"]
        profile = extract_profile(state, st["burn_in"], st["tau_max"])
        regime = classify_regime(profile, st["threshold"])
        p = spec.n_pops
        rows = (
            [profile.taus[k]] + [profile.c[a, k] for a in range(p)] + [profile.defect_per_tau[k]]
            for k in range(len(profile.taus))
        )
        _write_csv(out / "stationary.csv",
                   ["tau"] + [f"c_{a + 1}" for a in range(p)] + ["defect"], rows)
        _write_json(out / "regime.json", {
            "gain": [_gain_of(q.sigmoid) for q in spec.populations],
            "classification": regime.value,
            "c0": profile.c0.tolist(),
            "defect": profile.defect,
            "threshold": st["threshold"],
            "converged": report.converged,
        }, resolved)
        _echo_err(f"stationary: regime={regime.value}, c0={profile.c0.max():.4g}")
        sys.exit(EXIT_OK if report.converged else EXIT_UNCONVERGED)
    except (ConfigError, SpecValidationError, ValueError) as exc:
        _echo_err(f"invalid input: {exc}")
        sys.exit(EXIT_INVALID)
    except NumericalError as exc:
        _echo_err(f"numerical failure: {exc}")
        sys.exit(EXIT_NUMERICAL)


@main.command("sweep")
@_with_common
def sweep_cmd(verbose, **opts):
    """Parameter sweep with per-point fixed-point solves; writes sweep.csv."""
    try:
        spec, resolved = _prepare(**opts)
        sw = resolved["sweep"]
        parameter = sw.get("parameter", "g")
        if parameter not in SWEEP_PARAMETERS:
            raise ConfigError(f"sweep parameter must be one of {SWEEP_PARAMETERS}")
        if "values" in sw:
            values = np.asarray(sw["values"], dtype=float)
        elif {"start", "stop", "step"} <= sw.keys():
            values = np.arange(sw["start"], sw["stop"] + 0.5 * sw["step"], sw["step"])
        else:
            raise ConfigError("sweep needs 'values' or start/stop/step")
        if values.size == 0:
            raise ConfigError("sweep grid is empty")
        grid = _grid_of(resolved) if resolved["grid"]["explicit"] else None
        out = _outdir(resolved)
        result = sweep(spec, parameter, values, grid,
                       ic_offset=float(sw.get("ic_offset", 0.1)),
                       regime_threshold=resolved["stationary"]["threshold"],
                       threads=resolved["threads"], **_solver_kwargs(resolved))
        p = spec.n_pops
        header = ["value"]
        for name in ("mean_plus", "mean_minus", "c0", "amplitude", "period"):
            header += [f"{name}_{a + 1}" for a in range(p)]
        header += ["regime", "converged", "error"]
        nanrow = [np.nan] * p

        def rows():
            for pt in result.points:
                row = [pt.value]
                for arr in (pt.mean_plus, pt.mean_minus, pt.c0, pt.amplitude, pt.period):
                    row += list(arr) if arr is not None else nanrow
                row += [pt.regime, int(pt.converged), pt.error]
                yield row

        _write_csv(out / "sweep.csv", header, rows())
        taus = spec.taus
        if p == 2 and np.all(taus == taus[0]):
            ha = hopf_analysis(spec.connectivity.j_bar, float(taus[0]),
                               g=_gain_of(spec.populations[0].sigmoid))
            _write_json(out / "hopf.json", {
                "eigenvalues": [[z.real, z.imag] for z in ha.eigenvalues],
                "system_eigenvalues": [[z.real, z.imag] for z in ha.system_eigenvalues],
                "g_c": ha.g_c,
                "g_c_reason": ha.g_c_reason,
                "is_feedback_loop": ha.is_feedback_loop,
            }, resolved)
        split = branch_split_value(result)
        _echo_err(f"sweep: {len(values)} points, branch split at "
                  f"{split if split is not None else 'none'}")
        sys.exit(EXIT_OK)
    except (ConfigError, SpecValidationError, ValueError) as exc:
        _echo_err(f"invalid input: {exc}")
        sys.exit(EXIT_INVALID)
    except NumericalError as exc:
        _echo_err(f"numerical failure: {exc}")
        sys.exit(EXIT_NUMERICAL)


@main.command("mc-validate")
@_with_common
def mc_validate(verbose, **opts):
    """Finite-network Monte Carlo vs the mean-field solution (z-scores)."""
    try:
        spec, resolved = _prepare(**opts)
        mc_cfg = resolved["mc"]
        for key in ("sizes", "trials", "seed"):
            if key not in mc_cfg:
                raise ConfigError(f"mc config missing '{key}'")
        grid = _grid_of(resolved)
        dt_sde = mc_cfg.get("dt_sde") or grid.dt / 5.0
        mc = McConfig(sizes=tuple(mc_cfg["sizes"]), trials=int(mc_cfg["trials"]),
                      seed=int(mc_cfg["seed"]), dt_sde=float(dt_sde),
                      resample_weights_per_trial=bool(mc_cfg.get("resample_weights", True)))
        z_max = float(mc_cfg.get("z_max", 4.0))
        out = _outdir(resolved)
        state, report = solve_fixed_point(spec, grid, **_solver_kwargs(resolved))
        ens = run_ensemble(spec, grid, mc, threads=resolved["threads"])
        moments = empirical_moments(ens)
        comparison = compare_mc_mf(spec, moments, state,
                                   rule=gh_rule(resolved["solver"]["order"]))
        p = spec.n_pops
        header = ["t"]
        for a in range(p):
            header += [f"mean_{a + 1}", f"mean_se_{a + 1}", f"var_{a + 1}", f"var_se_{a + 1}"]
        rows = (
            [moments.times[i]] + [x for a in range(p)
                                  for x in (moments.mean[a, i], moments.mean_se[a, i],
                                            moments.var[a, i], moments.var_se[a, i])]
            for i in range(len(moments.times))
        )
        _write_csv(out / "mc_moments.csv", header, rows)
        _write_json(out / "mc_compare.json",
                    {"comparison": comparison, "z_max": z_max,
                     "mf_converged": report.converged}, resolved)
        _echo_err(f"mc-validate: max z = {comparison['max_z']:.3f} (limit {z_max})")
        sys.exit(EXIT_OK if comparison["max_z"] <= z_max else EXIT_UNCONVERGED)
    except (ConfigError, SpecValidationError, ValueError) as exc:
        _echo_err(f"invalid input: {exc}")
        sys.exit(EXIT_INVALID)
    except NumericalError as exc:
        _echo_err(f"numerical failure: {exc}")
        sys.exit(EXIT_NUMERICAL)


# ---------------------------------------------------------------------------
# Selftest
# ---------------------------------------------------------------------------

def _selftest_checks() -> list[tuple[str, bool, str]]:
    import numpy as np
    from .model import (ConnectivityStats, Constant, NetworkSpec,
                        PopulationParams, Tanh)

    results = []

    def check(name, ok, detail=""):
        results.append((name, bool(ok), detail))

    rule = gh_rule(40)

    # Gaussian-measure quadrature: even/odd moments
    r20 = gh_rule(20)
    m4 = float((r20.nodes ** 4) @ r20.weights)
    modd = max(abs(float((r20.nodes ** k) @ r20.weights)) for k in (1, 3, 5, 7))
    check("gh-even-moments", abs(m4 - 3.0) < 1e-10, f"E[x^4]={m4!r}")
    check("gh-odd-moments", modd < 1e-12, f"max odd moment={modd:.2e}")
    check("gh-weight-sum", abs(float(r20.weights.sum()) - 1.0) < 1e-12, "")

    # OU closed form: stationary variance and pure decay
    ou_stat = ou_covariance(1.0, 1.0, 0.0, 20.0, 20.0)
    check("ou-stationary-variance", abs(ou_stat - 0.5) < 1e-8, f"{ou_stat!r}")
    ou_dec = ou_covariance(1.0, 0.0, 1.0, 2.0, 2.0)
    check("ou-decay", abs(ou_dec - np.exp(-4.0)) < 1e-14, f"{ou_dec!r}")

    # H/D recursions vs the constant-kernel closed form, with Richardson check
    def h_err(dt):
        n = int(round(2.0 / dt)) + 1
        t = dt * np.arange(n)
        h = _h_matrix(np.ones((n, n)), dt, 1.0)
        exact = (1.0 - np.exp(-t))[:, None] * (1.0 - np.exp(-t))[None, :]
        return float(np.max(np.abs(h - exact)))

    e1, e2 = h_err(0.02), h_err(0.01)
    check("h-recursion-error", e1 < 5 * 0.02, f"err(dt=0.02)={e1:.3e}")
    check("h-recursion-richardson", 0.35 < e2 / e1 < 0.65, f"ratio={e2 / e1:.3f}")

    # closed-form Gaussian-CDF sigmoid mean vs quadrature (within the
    # envelope g^2 v <= 4 where the order-40 rule has converged)
    worst = 0.0
    for g in (0.5, 2.0):
        for gamma in (0.0, 1.0):
            mus, vs = np.meshgrid(np.linspace(-3, 3, 10), np.linspace(0.0, 1.0, 10))
            q = gauss_expect(ErfForm(g=g, gamma=gamma), mus, vs, rule)
            worst = max(worst, float(np.abs(q - erf_mean_closed(g, gamma, mus, vs)).max()))
    check("erf-mean-closed", worst < 1e-8, f"max |closed - quadrature| = {worst:.2e}")

    # closed-form Delta: derived matches 2-D quadrature, printed does not
    stats = BivariateGaussianStats(mu_u=0.2, mu_v=-0.1, v_u=0.5, v_v=0.8, c_uv=0.3)
    two_d = delta_kernel(ErfForm(g=1.0), stats, rule)
    derived = erf_delta_closed(1.0, 0.0, stats, rule, form="derived")
    printed = erf_delta_closed(1.0, 0.0, stats, rule, form="printed")
    check("erf-delta-derived", abs(derived - two_d) < 1e-6,
          f"derived-2D={derived - two_d:.2e}")
    check("erf-delta-printed-differs", abs(printed - two_d) > 1e-3,
          f"printed-2D={printed - two_d:.2e} (documented mismatch)")

    # Hermite-series Delta vs direct quadrature on an OU-correlated grid,
    # in the mild regime where the order-40 direct route itself is converged
    t = np.linspace(0, 2, 40)
    v = 0.6 + 0.4 * np.exp(-t)
    sd = np.sqrt(v)
    cov = np.outer(sd, sd) * np.exp(-np.abs(t[:, None] - t[None, :]) / 0.5)
    mu = 0.3 * np.sin(t)
    dm = delta_matrix(Tanh(g=1.0), mu, v, cov, rule)
    worst = 0.0
    for i in range(0, len(t), 3):
        for j in range(0, len(t), 3):
            s = BivariateGaussianStats(mu_u=mu[i], mu_v=mu[j], v_u=v[i], v_v=v[j],
                                       c_uv=cov[i, j])
            worst = max(worst, abs(dm[i, j] - delta_kernel(Tanh(g=1.0), s, rule)))
    check("delta-series-vs-direct", worst < 1e-6, f"max diff = {worst:.2e}")

    # sharply saturating case: series vs adaptive 2-D reference
    from scipy import integrate
    i, j = 0, 20
    dm5 = delta_matrix(Tanh(g=5.0), mu, v, cov, rule)
    a = np.sqrt(v[i] * v[j] - cov[i, j] ** 2) / sd[j]
    b = cov[i, j] / sd[j]
    ref = integrate.dblquad(
        lambda x, y: np.tanh(5 * (a * x + b * y + mu[i])) * np.tanh(5 * (sd[j] * y + mu[j]))
        * np.exp(-(x * x + y * y) / 2) / (2 * np.pi), -9, 9, -9, 9, epsabs=1e-11)[0]
    check("delta-series-sharp", abs(dm5[i, j] - ref) < 2e-3,
          f"series-adaptive = {dm5[i, j] - ref:.2e}")

    # deterministic limit: fixed point reproduces the rate-equation baseline
    spec = NetworkSpec(
        populations=(PopulationParams(tau=1.0, f=0.0, sigmoid=Tanh(g=2.0),
                                      input=Constant(0.1)),),
        connectivity=ConnectivityStats([[0.8]], [[0.0]]),
        initial_mean=[0.5], initial_variance=[0.0])
    grid = TimeGrid(0.0, 5.0, 0.01)
    state, report = solve_fixed_point(spec, grid, rule=rule)
    wc = wilson_cowan_solve(spec, grid, rule)
    dev = float(np.max(np.abs(state.mu - wc)))
    check("deterministic-limit", report.converged and dev < 1e-10, f"max diff = {dev:.2e}")

    # oscillation detector on a synthetic cycle
    tt = np.arange(0.0, 30.0, 0.01)
    osc = detect_oscillation(tt, np.sin(2 * np.pi * tt / 3.0), burn_in=3.0)
    check("oscillation-detector",
          osc is not None and abs(osc.period - 3.0) < 0.02 and abs(osc.amplitude - 1.0) < 0.01,
          f"period={getattr(osc, 'period', None)}")
    return results


@main.command()
def selftest():
    """Run the embedded oracle checks; exit 0 iff all pass."""
    results = _selftest_checks()
    failed = [name for name, ok, _ in results if not ok]
    for name, ok, detail in results:
        status = "ok" if ok else "FAIL"
        click.echo(f"{name}: {status}" + (f" ({detail})" if detail else ""))
    if failed:
        _echo_err(f"selftest failed: {', '.join(failed)}")
        sys.exit(EXIT_NUMERICAL)
    sys.exit(EXIT_OK)


if __name__ == "__main__":
    main()
