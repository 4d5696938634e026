"""Benchmark problems: four optimal control problems with floor-truncated
Mayer costs and a set of small analytic reformulation counterexamples.

All parameters are keyword defaults and are echoed in ``OcpSpec.params``.
Mayer costs use the smoothed floor (``value``) and carry their exact form
(``exact``) for scoring.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .dynamics import LotkaVolterra, Oscillator, StreamBoat
from .ocp import (
    ControlCost,
    MayerTerm,
    OcpSpec,
    StateBounds,
    TerminalConstraints,
    segment_subproblem,
    uncontrolled_trajectory,
)
from .problem import NlpProblem, Partition, phase1
from .scoring import WeightedNorm, distance_floor_term, oscillator_energy_term, scaled_floor_term
from .smooth import SolverSettings
from .smoothing import FloorApprox

# Stream field constants are a reconstruction: only qualitative properties are published.
STREAM_PEAK_SPEED = 3.0
STREAM_CROSS_STRENGTH = 0.5


@dataclass(frozen=True)
class StreamField:
    y_max: float = 6.0
    v_peak: float = STREAM_PEAK_SPEED
    w: float = STREAM_CROSS_STRENGTH

    def s1(self, x, y):
        y = np.asarray(y, dtype=float)
        return -self.v_peak * 4.0 * y * (self.y_max - y) / self.y_max**2 + 0.0 * np.asarray(x, dtype=float)

    def s2(self, x, y):
        y = np.asarray(y, dtype=float)
        return self.w * (1.0 - 2.0 * y / self.y_max) + 0.0 * np.asarray(x, dtype=float)

    def dynamics(self) -> StreamBoat:
        return StreamBoat(self.y_max, self.v_peak, self.w)


def _smoothed_distance(target, weights, fa: FloorApprox):
    norm = WeightedNorm(tuple(float(a) for a in weights))
    target = np.asarray(target, dtype=float)

    def value(x):
        return float(fa(norm(np.asarray(x) - target)))

    def gradient(x):
        d = np.asarray(x) - target
        return fa.derivative(norm(d)) * norm.gradient(d)

    return value, gradient


# -- optimal control benchmarks ----------------------------------------------


def harmonic_oscillator(T: float = 60.0, N: int = 600, M: float = 2.0, K: float = 0.5,
                        tau: float = 75.0, floor_interval=(-30, 30)) -> OcpSpec:
    fa = FloorApprox(tau, *floor_interval)

    def value(x):
        return 0.5 * M * float(x[1]) ** 2 - 0.5 * K * float(fa(x[0])) ** 2

    def gradient(x):
        return np.array([-K * float(fa(x[0])) * float(fa.derivative(x[0])), M * float(x[1])])

    return OcpSpec(
        n=2, m=1, horizon=T, steps=N, x0=np.array([1.0, 0.0]),
        dynamics=Oscillator(M, K),
        lagrange=ControlCost((1.0 / T,)),
        mayer=(MayerTerm(N, value, gradient, oscillator_energy_term(M, K), "energy"),),
        control_lower=np.array([0.0]), control_upper=np.array([1.0]),
        name="harmonic_oscillator",
        params=dict(T=T, N=N, M=M, K=K, tau=tau, floor_interval=list(floor_interval)),
    )


def _polar_warm_controls(U):
    # u = 0 makes the heading gradient vanish and theta = 0 is stationary for u cos(theta);
    # start idle steps from a small thrust pointing across the river instead
    U = np.array(U, dtype=float)
    idle = U[:, 0] < 0.1
    U[idle, 0] = 0.1
    U[idle, 1] = 0.5 * np.pi
    return U


def _zermelo_common(T, N, y_max, stream: Optional[StreamField]):
    stream = stream or StreamField(y_max)
    if stream.y_max != y_max:
        raise ValueError("stream width must match y_max")
    return dict(
        n=2, m=2, horizon=T, steps=N, x0=np.array([0.0, 0.0]),
        dynamics=stream.dynamics(),
        lagrange=ControlCost((1.0 / T, 0.0)),
        path=(StateBounds(1, 0.0, y_max),),
        control_lower=np.array([0.0, -np.inf]), control_upper=np.array([1.0, np.inf]),
        knot_lower=np.array([-np.inf, 0.0]), knot_upper=np.array([np.inf, y_max]),
        warm_controls=_polar_warm_controls,
    ), stream


def zermelo_one(T: float = 40.0, N: int = 400, y_max: float = 6.0, stream: Optional[StreamField] = None,
                tau: float = 75.0, floor_interval=(-40, 5)) -> OcpSpec:
    common, stream = _zermelo_common(T, N, y_max, stream)
    fa = FloorApprox(tau, *floor_interval)

    def value(x):
        return -float(fa(x[0] / 10.0))

    def gradient(x):
        return np.array([-float(fa.derivative(x[0] / 10.0)) / 10.0, 0.0])

    return OcpSpec(
        **common,
        mayer=(MayerTerm(N, value, gradient, scaled_floor_term(0, 10.0), "parking"),),
        terminal=TerminalConstraints.fix(1, y_max, 2),
        name="zermelo_one",
        params=dict(T=T, N=N, y_max=y_max, v_peak=stream.v_peak, w=stream.w, tau=tau,
                    floor_interval=list(floor_interval)),
    )


def zermelo_two(T: float = 40.0, N: int = 400, y_max: float = 6.0,
                A=(-325.0, 0.0), alpha=(1 / 20, 5 / 6), B=(-175.0, 6.0), beta=(1 / 20, 1 / 2),
                stream: Optional[StreamField] = None, tau: float = 75.0, floor_interval=(-1, 40)) -> OcpSpec:
    if N % 2:
        raise ValueError("N must be even so that N/2 is a step index")
    common, stream = _zermelo_common(T, N, y_max, stream)
    fa = FloorApprox(tau, *floor_interval)
    va, ga = _smoothed_distance(A, alpha, fa)
    vb, gb = _smoothed_distance(B, beta, fa)
    return OcpSpec(
        **common,
        mayer=(
            MayerTerm(N // 2, vb, gb, distance_floor_term(B, beta), "midpoint"),
            MayerTerm(N, va, ga, distance_floor_term(A, alpha), "final"),
        ),
        terminal=TerminalConstraints.box(1, 0.0, y_max, 2),
        name="zermelo_two",
        params=dict(T=T, N=N, y_max=y_max, A=list(A), alpha=list(alpha), B=list(B), beta=list(beta),
                    v_peak=stream.v_peak, w=stream.w, tau=tau, floor_interval=list(floor_interval)),
    )


def lotka_volterra(T: float = 60.0, N: int = 600, X0=(2.25, 4.25), Xbar=(1.0, 1.0), alpha=(1.0, 1.0),
                   u_max: float = 0.25, tau: float = 75.0, floor_interval=(-1, 20)) -> OcpSpec:
    fa = FloorApprox(tau, *floor_interval)
    value, gradient = _smoothed_distance(Xbar, alpha, fa)
    return OcpSpec(
        n=2, m=1, horizon=T, steps=N, x0=np.array(X0, dtype=float),
        dynamics=LotkaVolterra(*Xbar),
        lagrange=ControlCost((1.0 / T,)),
        mayer=(MayerTerm(N, value, gradient, distance_floor_term(Xbar, alpha), "equilibrium"),),
        control_lower=np.array([0.0]), control_upper=np.array([u_max]),
        knot_lower=np.array([0.0, 0.0]),
        name="lotka_volterra",
        params=dict(T=T, N=N, X0=list(X0), Xbar=list(Xbar), alpha=list(alpha), u_max=u_max, tau=tau,
                    floor_interval=list(floor_interval)),
    )


BENCHMARKS: dict[str, Callable[..., OcpSpec]] = {
    "harmonic_oscillator": harmonic_oscillator,
    "zermelo_one": zermelo_one,
    "zermelo_two": zermelo_two,
    "lotka_volterra": lotka_volterra,
}

ALIASES = {"ho": "harmonic_oscillator", "z1": "zermelo_one", "z2": "zermelo_two", "lv": "lotka_volterra"}


def build(name: str, **params) -> OcpSpec:
    key = ALIASES.get(name, name)
    if key not in BENCHMARKS:
        raise KeyError(f"unknown benchmark {name!r}; choose from {sorted(BENCHMARKS)}")
    ctor = BENCHMARKS[key]
    if key in ("zermelo_one", "zermelo_two") and ({"v_peak", "w"} & set(params)):
        if "stream" in params:
            raise KeyError("give either a stream or v_peak/w, not both")
        y_max = params.get("y_max", 6.0)
        params["stream"] = StreamField(y_max, params.pop("v_peak", STREAM_PEAK_SPEED),
                                       params.pop("w", STREAM_CROSS_STRENGTH))
    unknown = set(params) - set(ctor.__code__.co_varnames[: ctor.__code__.co_argcount])
    if unknown:
        raise KeyError(f"unknown parameters for {key}: {sorted(unknown)}")
    return ctor(**params)


def default_config(name: str) -> dict:
    """Default parameters of a benchmark, JSON-serializable."""
    return json.loads(json.dumps(build(name).params))


# -- analytic counterexamples -------------------------------------------------


@dataclass
class Counterexample:
    label: str
    problem: NlpProblem
    partition: Partition
    expected: dict = field(default_factory=dict)


def _sgn(v):
    return float(np.sign(v))


def counterexample(label: str) -> Counterexample:
    """Two-variable problems in ``(y, z)`` with ``y`` the singular variable."""
    part = Partition(2, (0,))
    label = str(label)
    if label == "2.4":
        f = lambda x: math.exp(abs(x[0]) + x[1])  # noqa: E731
        g = lambda x: f(x) * np.array([_sgn(x[0]), 1.0])  # noqa: E731
        prob = NlpProblem.from_functions(2, f, objective_gradient=g, name="ex2.4")
        return Counterexample(label, prob, part, dict(
            reformulation_value=0.0, subproblem_fd_not_fwd=True, full_fd_not_fwd=True))
    if label == "2.5":
        f = lambda x: abs(x[0]) * math.exp(x[1]) + abs(x[0] - 1.0) * x[1] ** 2  # noqa: E731
        g = lambda x: np.array([  # noqa: E731
            _sgn(x[0]) * math.exp(x[1]) + _sgn(x[0] - 1.0) * x[1] ** 2,
            abs(x[0]) * math.exp(x[1]) + 2.0 * abs(x[0] - 1.0) * x[1],
        ])
        prob = NlpProblem.from_functions(2, f, objective_gradient=g, name="ex2.5")
        return Counterexample(label, prob, part, dict(
            reformulation_optima=(0.0, 1.0), full_optimum=(0.0, 0.0), fwd_at=0.0, fd_not_fwd_at=1.0))
    if label == "2.6":
        f = lambda x: abs(x[0]) * math.exp(x[1])  # noqa: E731
        g = lambda x: np.array([_sgn(x[0]) * math.exp(x[1]), abs(x[0]) * math.exp(x[1])])  # noqa: E731
        prob = NlpProblem.from_functions(2, f, objective_gradient=g, name="ex2.6")
        return Counterexample(label, prob, part, dict(full_optimum=(0.0, 0.0), fd_not_fwd_unless=0.0))
    if label in ("2.7", "2.8"):
        f = lambda x: abs(x[0]) + x[1] ** 2  # noqa: E731
        g = lambda x: np.array([_sgn(x[0]), 2.0 * x[1]])  # noqa: E731
        prob = NlpProblem.from_functions(
            2, f,
            inequality_constraints=[lambda x: 1.0 - x[0] - x[1], lambda x: 1.0 - x[0] + x[1]],
            objective_gradient=g,
            inequality_gradients=[lambda x: np.array([-1.0, -1.0]), lambda x: np.array([-1.0, 1.0])],
            name="ex2.7",
        )
        return Counterexample(label, prob, part, dict(
            full_optimum=(1.0, 0.0), infeasible_below=1.0,
            mu=lambda y: 2.0 * (1.0 - y) ** 2 if y < 1 else 0.0, objective=lambda y: abs(y)))
    raise KeyError(f"unknown counterexample {label!r}")


def example_2_8_blackbox(y) -> tuple[float, float]:
    """Closed form of the two-phase blackbox of the infeasible-subproblem example."""
    y = float(np.asarray(y).ravel()[0])
    return abs(y), (2.0 * (1.0 - y) ** 2 if y < 1.0 else 0.0)


# -- infeasibility scan -------------------------------------------------------


@dataclass
class ScanResult:
    xs: np.ndarray
    ys: np.ndarray
    mu: np.ndarray  # mu[i, j] at (xs[j], ys[i])
    extra: list = field(default_factory=list)  # (point, mu)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["x", "y", "mu"])
        for i, yv in enumerate(self.ys):
            for j, xv in enumerate(self.xs):
                w.writerow([repr(float(xv)), repr(float(yv)), repr(float(self.mu[i, j]))])
        for p, m in self.extra:
            w.writerow([repr(float(p[0])), repr(float(p[1])), repr(float(m))])
        return buf.getvalue()


def endpoint_infeasibility(spec: OcpSpec, x_end, settings: Optional[SolverSettings] = None, reference=None) -> float:
    """Minimal infeasibility of reaching ``x_end`` at step N from the initial state."""
    ref = reference if reference is not None else uncontrolled_trajectory(spec)
    seg = segment_subproblem(spec, 0, spec.x0, spec.steps, np.asarray(x_end, dtype=float))
    z0 = seg.warm_start(ref.states, ref.controls)
    _, mu, _ = phase1(seg.problem, Partition(seg.dimension), np.zeros(0), z0, settings)
    return mu


def infeasibility_scan(spec: OcpSpec, x_range=(0.0, 5.0), y_range=(0.0, 5.0), resolution=(20, 20),
                       settings: Optional[SolverSettings] = None, extra_points: Sequence = ()) -> ScanResult:
    """Phase-1 infeasibility of the full-horizon segment on a grid of endpoints."""
    nx, ny = resolution
    xs = np.linspace(*x_range, nx) if nx > 1 else np.array([0.5 * (x_range[0] + x_range[1])])
    ys = np.linspace(*y_range, ny) if ny > 1 else np.array([0.5 * (y_range[0] + y_range[1])])
    ref = uncontrolled_trajectory(spec)
    mu = np.empty((ys.size, xs.size))
    for i, yv in enumerate(ys):
        for j, xv in enumerate(xs):
            mu[i, j] = endpoint_infeasibility(spec, (xv, yv), settings, ref)
    extra = [(np.asarray(p, dtype=float), endpoint_infeasibility(spec, p, settings, ref)) for p in extra_points]
    return ScanResult(xs, ys, mu, extra)
