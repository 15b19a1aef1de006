"""Network parameterization: sigmoid catalog, inputs, connectivity, time grids.

Everything here is immutable after construction so specs can be shared freely
across workers. Arrays are copied on the way in and marked read-only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Union

import numpy as np
from scipy.special import expit, ndtr


class SpecValidationError(ValueError):
    """Raised by validate_spec; carries every violation found, not just the first."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


def _readonly(a, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


# ---------------------------------------------------------------------------
# Sigmoid catalog
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Logistic:
    """S(x) = s_max / (1 + exp(-(x - v_t)/v_s))."""

    s_max: float = 1.0
    v_t: float = 0.0
    v_s: float = 1.0

    kind = "logistic"

    def __call__(self, x):
        return self.s_max * expit((np.asarray(x, dtype=float) - self.v_t) / self.v_s)

    @property
    def bound(self) -> float:
        return abs(self.s_max)


@dataclass(frozen=True)
class ErfForm:
    """S(x) = Phi(g*x + gamma), Phi the standard normal CDF."""

    g: float = 1.0
    gamma: float = 0.0

    kind = "erf"

    def __call__(self, x):
        return ndtr(self.g * np.asarray(x, dtype=float) + self.gamma)

    @property
    def bound(self) -> float:
        return 1.0


@dataclass(frozen=True)
class Tanh:
    """S(x) = tanh(g*x)."""

    g: float = 1.0

    kind = "tanh"

    def __call__(self, x):
        return np.tanh(self.g * np.asarray(x, dtype=float))

    @property
    def bound(self) -> float:
        return 1.0


@dataclass(frozen=True)
class SqrtClassI:
    """S(p) = c * sqrt((p - p_star)^+), the class-I firing-onset form.

    Unbounded and non-Lipschitz at p_star; the fixed-point solver accepts it
    but uniqueness guarantees that hold for the smooth catalog entries do not
    carry over.
    """

    c: float = 1.0
    p_star: float = 0.0

    kind = "sqrt"

    def __call__(self, x):
        return self.c * np.sqrt(np.maximum(np.asarray(x, dtype=float) - self.p_star, 0.0))

    @property
    def bound(self) -> None:
        return None


Sigmoid = Union[Logistic, ErfForm, Tanh, SqrtClassI]

_SIGMOID_KINDS = {cls.kind: cls for cls in (Logistic, ErfForm, Tanh, SqrtClassI)}


def eval_sigmoid(s: Sigmoid, x):
    """Evaluate a catalog sigmoid at x (scalar or array)."""
    return s(x)


def with_gain(s: Sigmoid, g: float) -> Sigmoid:
    """Return a copy of s with its slope knob set to g.

    tanh/erf expose g directly; for the logistic the slope is governed by
    1/v_s; for the square-root form the gain c plays that role.
    """
    if isinstance(s, Logistic):
        return replace(s, v_s=1.0 / g)
    if isinstance(s, (ErfForm, Tanh)):
        return replace(s, g=g)
    return replace(s, c=g)


# ---------------------------------------------------------------------------
# Deterministic inputs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Constant:
    value: float = 0.0

    kind = "constant"

    def __call__(self, t):
        return np.full_like(np.asarray(t, dtype=float), self.value)


@dataclass(frozen=True)
class PiecewiseConstant:
    """Right-continuous step input; values has one more entry than breakpoints."""

    breakpoints: np.ndarray
    values: np.ndarray

    kind = "piecewise"

    def __post_init__(self):
        object.__setattr__(self, "breakpoints", _readonly(self.breakpoints))
        object.__setattr__(self, "values", _readonly(self.values))
        if len(self.values) != len(self.breakpoints) + 1:
            raise ValueError("need len(values) == len(breakpoints) + 1")
        if len(self.breakpoints) and np.any(np.diff(self.breakpoints) <= 0):
            raise ValueError("breakpoints must be strictly increasing")

    def __call__(self, t):
        idx = np.searchsorted(self.breakpoints, np.asarray(t, dtype=float), side="right")
        return self.values[idx]


@dataclass(frozen=True)
class Sinusoid:
    mean: float = 0.0
    amplitude: float = 0.0
    period: float = 1.0

    kind = "sinusoid"

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return self.mean + self.amplitude * np.sin(2.0 * np.pi * t / self.period)


InputSignal = Union[Constant, PiecewiseConstant, Sinusoid]

_INPUT_KINDS = {cls.kind: cls for cls in (Constant, PiecewiseConstant, Sinusoid)}


def eval_input(sig: InputSignal, t):
    """Evaluate a deterministic input at time(s) t."""
    return sig(t)


# ---------------------------------------------------------------------------
# Populations, connectivity, full network spec
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PopulationParams:
    tau: float                      # membrane time constant, > 0
    f: float = 0.0                  # white-noise amplitude, >= 0
    sigmoid: Sigmoid = field(default_factory=Tanh)
    input: InputSignal = field(default_factory=Constant)


@dataclass(frozen=True)
class ConnectivityStats:
    """Mean coupling j_bar[a, b] and dispersion sigma[a, b], both P x P."""

    j_bar: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "j_bar", _readonly(np.atleast_2d(self.j_bar)))
        object.__setattr__(self, "sigma", _readonly(np.atleast_2d(self.sigma)))


@dataclass(frozen=True)
class NetworkSpec:
    """Full parameter set of the network: populations, coupling statistics,
    and the Gaussian initial condition (per-population mean and variance)."""

    populations: tuple[PopulationParams, ...]
    connectivity: ConnectivityStats
    initial_mean: np.ndarray
    initial_variance: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "populations", tuple(self.populations))
        object.__setattr__(self, "initial_mean", _readonly(np.atleast_1d(self.initial_mean)))
        object.__setattr__(self, "initial_variance", _readonly(np.atleast_1d(self.initial_variance)))

    @property
    def n_pops(self) -> int:
        return len(self.populations)

    @property
    def taus(self) -> np.ndarray:
        return np.array([p.tau for p in self.populations])

    @property
    def noise_amplitudes(self) -> np.ndarray:
        return np.array([p.f for p in self.populations])


def spec_errors(spec: NetworkSpec) -> list[str]:
    """All invariant violations, each with the offending field path."""
    errs = []
    p = spec.n_pops
    if p < 1:
        errs.append("populations: need at least one population")
    for i, pop in enumerate(spec.populations):
        if not pop.tau > 0:
            errs.append(f"populations[{i}].tau: non-positive time constant ({pop.tau})")
        if pop.f < 0:
            errs.append(f"populations[{i}].f: negative noise amplitude ({pop.f})")
        if isinstance(pop.sigmoid, Logistic) and not (pop.sigmoid.s_max > 0 and pop.sigmoid.v_s > 0):
            errs.append(f"populations[{i}].sigmoid: logistic needs s_max > 0 and v_s > 0")
        if isinstance(pop.sigmoid, (ErfForm, Tanh)) and pop.sigmoid.g < 0:
            errs.append(f"populations[{i}].sigmoid.g: negative slope")
        if isinstance(pop.sigmoid, SqrtClassI) and not pop.sigmoid.c > 0:
            errs.append(f"populations[{i}].sigmoid.c: non-positive gain")
    for name in ("j_bar", "sigma"):
        m = getattr(spec.connectivity, name)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            errs.append(f"connectivity.{name}: dimension mismatch, not square ({m.shape})")
        elif m.shape[0] != p:
            errs.append(f"connectivity.{name}: dimension mismatch, shape {m.shape} for {p} populations")
    if spec.connectivity.sigma.size and np.any(spec.connectivity.sigma < 0):
        errs.append("connectivity.sigma: negative coupling dispersion")
    if spec.initial_mean.shape != (p,):
        errs.append(f"initial_mean: dimension mismatch, length {len(spec.initial_mean)} for {p} populations")
    if spec.initial_variance.shape != (p,):
        errs.append(f"initial_variance: dimension mismatch, length {len(spec.initial_variance)} for {p} populations")
    elif np.any(spec.initial_variance < 0):
        errs.append("initial_variance: negative variance")
    return errs


def validate_spec(spec: NetworkSpec) -> NetworkSpec:
    """Return spec unchanged if valid, else raise SpecValidationError listing
    every violation. Idempotent."""
    errs = spec_errors(spec)
    if errs:
        raise SpecValidationError(errs)
    return spec


def scale_connectivity(spec: NetworkSpec, *, j_scale: float = 1.0,
                       sigma_scale: float = 1.0, f_scale: float = 1.0) -> NetworkSpec:
    """Rescale coupling means, coupling dispersion, and/or noise amplitudes."""
    conn = ConnectivityStats(spec.connectivity.j_bar * j_scale,
                             spec.connectivity.sigma * sigma_scale)
    pops = tuple(replace(p, f=p.f * f_scale) for p in spec.populations)
    return replace(spec, populations=pops, connectivity=conn)


def with_gain_spec(spec: NetworkSpec, g: float) -> NetworkSpec:
    """Set the sigmoid slope knob of every population to g."""
    pops = tuple(replace(p, sigmoid=with_gain(p.sigmoid, g)) for p in spec.populations)
    return replace(spec, populations=pops)


# ---------------------------------------------------------------------------
# Time grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t0, t0+dt, ..., with n = floor((t_end-t0)/dt) + 1 points."""

    t0: float
    t_end: float
    dt: float

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.t_end > self.t0:
            raise ValueError("t_end must exceed t0")
        if self.n < 2:
            raise ValueError("grid needs at least two points")

    @property
    def n(self) -> int:
        # small slack so t_end that is an exact multiple of dt lands on the grid
        return int(np.floor((self.t_end - self.t0) / self.dt + 1e-9)) + 1

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n)


def default_grid(spec: NetworkSpec, t_end: float, t0: float = 0.0,
                 steps_per_tau: int = 100, n_cap: int = 4096) -> TimeGrid:
    """Grid with dt = min(tau)/steps_per_tau, coarsened so n stays <= n_cap
    (covariance storage is O(P n^2))."""
    dt = min(p.tau for p in spec.populations) / steps_per_tau
    n = int(np.floor((t_end - t0) / dt + 1e-9)) + 1
    if n > n_cap:
        dt = (t_end - t0) / (n_cap - 1)
    return TimeGrid(t0, t_end, dt)


# ---------------------------------------------------------------------------
# JSON (de)serialization
# ---------------------------------------------------------------------------

def _sigmoid_to_dict(s: Sigmoid) -> dict:
    d = {"kind": s.kind}
    for name in s.__dataclass_fields__:
        d[name] = float(getattr(s, name))
    return d


def _sigmoid_from_dict(d: dict) -> Sigmoid:
    d = dict(d)
    kind = d.pop("kind")
    if kind not in _SIGMOID_KINDS:
        raise ValueError(f"unknown sigmoid kind {kind!r}")
    return _SIGMOID_KINDS[kind](**d)


def _input_to_dict(s: InputSignal) -> dict:
    d = {"kind": s.kind}
    for name in s.__dataclass_fields__:
        v = getattr(s, name)
        d[name] = v.tolist() if isinstance(v, np.ndarray) else float(v)
    return d


def _input_from_dict(d: dict) -> InputSignal:
    d = dict(d)
    kind = d.pop("kind")
    if kind not in _INPUT_KINDS:
        raise ValueError(f"unknown input kind {kind!r}")
    return _INPUT_KINDS[kind](**d)


def spec_to_dict(spec: NetworkSpec) -> dict:
    return {
        "populations": [
            {
                "tau": float(p.tau),
                "f": float(p.f),
                "sigmoid": _sigmoid_to_dict(p.sigmoid),
                "input": _input_to_dict(p.input),
            }
            for p in spec.populations
        ],
        "j_bar": spec.connectivity.j_bar.tolist(),
        "sigma": spec.connectivity.sigma.tolist(),
        "initial_mean": spec.initial_mean.tolist(),
        "initial_variance": spec.initial_variance.tolist(),
    }


def spec_from_dict(d: dict) -> NetworkSpec:
    pops = tuple(
        PopulationParams(
            tau=float(p["tau"]),
            f=float(p.get("f", 0.0)),
            sigmoid=_sigmoid_from_dict(p["sigmoid"]),
            input=_input_from_dict(p.get("input", {"kind": "constant", "value": 0.0})),
        )
        for p in d["populations"]
    )
    return NetworkSpec(
        populations=pops,
        connectivity=ConnectivityStats(np.asarray(d["j_bar"], dtype=float),
                                       np.asarray(d["sigma"], dtype=float)),
        initial_mean=np.asarray(d["initial_mean"], dtype=float),
        initial_variance=np.asarray(d["initial_variance"], dtype=float),
    )


def load_spec(path) -> NetworkSpec:
    """Load and validate a NetworkSpec from a JSON document."""
    with open(Path(path)) as fh:
        return validate_spec(spec_from_dict(json.load(fh)))


def save_spec(spec: NetworkSpec, path) -> None:
    with open(Path(path), "w") as fh:
        json.dump(spec_to_dict(spec), fh, indent=2, sort_keys=True)
        fh.write("\n")
