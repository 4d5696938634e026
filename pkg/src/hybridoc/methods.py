"""The three competing methods and their run records.

* ``so``      - smooth solver on the full transcription.
* ``dfbbo``   - MADS over the controls, states obtained by roll-out.
* ``hybrid``  - MADS over knot states, each evaluation solving the segments.

All methods start from the uncontrolled trajectory.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import mads
from .ocp import (
    Lambda,
    OcpSpec,
    StitchResult,
    reformulation_blackbox,
    rollout,
    split_mayer,
    transcribe_full,
    uncontrolled_trajectory,
)
from .problem import _violation_unchecked
from .scoring import infeasibility, smoothed_objective, true_objective
from .smooth import SolverSettings, Status, minimize_constrained

METHODS = ("so", "dfbbo", "hybrid")

# Desk-scale defaults for the subproblem solves inside one hybrid evaluation.
SEGMENT_SETTINGS = SolverSettings(
    max_outer_iterations=12,
    max_inner_iterations=300,
    gradient_tolerance=1e-7,
    constraint_tolerance=1e-8,
)


@dataclass(frozen=True)
class MethodConfig:
    method: str
    lam: Optional[str] = None
    budget: int = 200
    seed: int = 0
    so_settings: SolverSettings = field(default_factory=SolverSettings)
    segment_settings: SolverSettings = SEGMENT_SETTINGS
    feasibility_tolerance: float = 1e-9
    min_mesh_size: float = 1e-9
    workers: int = 1
    attach_mayer: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.method == "hybrid" and not self.lam:
            raise ValueError("the hybrid method needs a knot set (e.g. 'N' or 'N/2,N')")
        if self.budget < 0:
            raise ValueError("budget must be non-negative")

    @property
    def label(self) -> str:
        return f"hybrid[{self.lam}]" if self.method == "hybrid" else self.method

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return json.loads(json.dumps(d))

    @classmethod
    def from_dict(cls, data: dict) -> "MethodConfig":
        data = dict(data)
        for key in ("so_settings", "segment_settings"):
            if isinstance(data.get(key), dict):
                base = SolverSettings() if key == "so_settings" else SEGMENT_SETTINGS
                data[key] = base.with_(**data[key])
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown method settings: {sorted(unknown)}")
        return cls(**data)

    def hash(self, spec: OcpSpec) -> str:
        payload = json.dumps({"benchmark": spec.name, "params": spec.params, "config": self.to_dict()},
                             sort_keys=True, default=str)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def array_hash(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a, dtype=float).tobytes())
    return h.hexdigest()[:16]


@dataclass
class RunRecord:
    benchmark: str
    method: str
    config_hash: str
    seed: int
    smoothed_objective: float
    true_objective: float
    infeasibility: float
    terminal_violation: float
    states: np.ndarray
    controls: np.ndarray
    status: str
    evaluations: int
    init_hash: str
    wall_time: float = 0.0
    history: list = field(default_factory=list, repr=False)
    h_max_trace: list = field(default_factory=list, repr=False)
    stats: dict = field(default_factory=dict)

    @property
    def degraded(self) -> bool:
        return self.status != Status.CONVERGED.value

    def fingerprint(self) -> str:
        """Hash of everything except wall time; equal for reproduced runs."""
        h = hashlib.sha256()
        h.update(json.dumps(self.summary(include_time=False), sort_keys=True, default=repr).encode())
        h.update(np.ascontiguousarray(self.states).tobytes())
        h.update(np.ascontiguousarray(self.controls).tobytes())
        for ev in self.history:
            h.update(ev.point.tobytes())
            h.update(repr((ev.f, ev.h)).encode())
        return h.hexdigest()

    def summary(self, include_time: bool = True) -> dict:
        out = {
            "benchmark": self.benchmark,
            "method": self.method,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "smoothed_objective": self.smoothed_objective,
            "true_objective": self.true_objective,
            "infeasibility": self.infeasibility,
            "terminal_violation": self.terminal_violation,
            "status": self.status,
            "evaluations": self.evaluations,
            "init_hash": self.init_hash,
            "stats": self.stats,
        }
        if include_time:
            out["wall_time"] = self.wall_time
        return out


def _record(spec, config, X, U, status, evaluations, init_hash, t0, history=(), h_trace=(), stats=None,
            infeas=None) -> RunRecord:
    return RunRecord(
        benchmark=spec.name,
        method=config.label,
        config_hash=config.hash(spec),
        seed=config.seed,
        smoothed_objective=smoothed_objective(spec, X, U),
        true_objective=true_objective(spec, X, U),
        infeasibility=infeasibility(spec, X, U) if infeas is None else infeas,
        terminal_violation=spec.terminal.violation(X[spec.steps]),
        states=np.array(X),
        controls=np.array(U),
        status=status.value if isinstance(status, Status) else str(status),
        evaluations=evaluations,
        init_hash=init_hash,
        wall_time=time.perf_counter() - t0,
        history=list(history),
        h_max_trace=list(h_trace),
        stats=stats or {},
    )


class InitializationError(ValueError):
    """The uncontrolled roll-out every method starts from is unusable."""


def _init(spec):
    tr = uncontrolled_trajectory(spec)
    if tr.truncated or not np.all(np.isfinite(tr.states)):
        raise InitializationError(
            f"uncontrolled roll-out of {spec.name} diverges with N = {spec.steps}; use a finer grid")
    return tr, array_hash(tr.states, tr.controls)


# -- smooth optimization ------------------------------------------------------


def run_so(spec: OcpSpec, config: MethodConfig) -> RunRecord:
    t0 = time.perf_counter()
    tr, ih = _init(spec)
    full = transcribe_full(spec)
    v0 = full.pack(tr.states, tr.controls)
    if config.budget == 0:
        h0 = _violation_unchecked(full.problem, v0)
        return _record(spec, config, tr.states, tr.controls, Status.ITERATION_LIMIT, 0, ih, t0, infeas=h0)
    rep = minimize_constrained(full.problem, v0, config.so_settings)
    X, U = full.unpack(rep.minimizer)
    X = np.vstack([spec.x0, X[1:]])
    return _record(spec, config, X, U, rep.status, rep.function_evaluations, ih, t0,
                   infeas=rep.violation,
                   stats={"iterations": rep.iterations, "outer_iterations": rep.outer_iterations,
                          "projected_gradient": rep.projected_gradient})


# -- derivative-free over the controls ---------------------------------------


def _bounds_and_frame(lo, hi, default_frame):
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    frame = np.where(np.isfinite(lo) & np.isfinite(hi), 0.5 * (hi - lo), default_frame)
    return lo, hi, frame


def run_dfbbo(spec: OcpSpec, config: MethodConfig) -> RunRecord:
    t0 = time.perf_counter()
    tr, ih = _init(spec)
    N, m = spec.steps, spec.m
    lo = np.tile(spec.control_lower if spec.control_lower is not None else np.full(m, -np.inf), N)
    hi = np.tile(spec.control_upper if spec.control_upper is not None else np.full(m, np.inf), N)
    lo, hi, frame = _bounds_and_frame(lo, hi, np.ones(N * m))

    def blackbox(u):
        run = rollout(spec, u.reshape(N, m))
        if run.truncated:
            return math.nan, math.nan
        X = run.states
        return smoothed_objective(spec, X, run.controls), infeasibility(spec, X, run.controls)

    if config.budget == 0:
        return _record(spec, config, tr.states, tr.controls, Status.ITERATION_LIMIT, 0, ih, t0)
    settings = mads.MadsSettings(
        max_evaluations=config.budget, initial_frame_size=frame, min_mesh_size=config.min_mesh_size,
        feasibility_tolerance=config.feasibility_tolerance, seed=config.seed, lower=lo, upper=hi,
    )
    res = mads.solve(blackbox, tr.controls.ravel(), settings)
    if res.best_feasible is not None:
        u = res.best_feasible[0]
    elif res.best_infeasible is not None:
        u = res.best_infeasible[0]
    else:
        u = tr.controls.ravel()
    run = rollout(spec, u.reshape(N, m))
    # a fixed evaluation budget is the normal stop; only an infeasible answer is degraded
    feasible = res.best_feasible is not None
    status = Status.CONVERGED if feasible else Status.ITERATION_LIMIT
    return _record(spec, config, run.states, run.controls, status, res.evaluations, ih, t0,
                   history=res.history, h_trace=res.h_max_trace,
                   stats={"iterations": res.iterations, "stop_reason": res.stop_reason,
                          "feasible_found": res.best_feasible is not None})


# -- hybrid -------------------------------------------------------------------


class HybridBlackbox:
    """``knots -> (f, h)`` with segment warm starts from the best stitch so far."""

    def __init__(self, spec: OcpSpec, lam: Lambda, config: MethodConfig, reference):
        self.spec = spec
        self.lam = lam
        self.config = config
        self.reference = reference
        self.best: Optional[tuple[tuple, StitchResult]] = None
        self.results: dict = {}

    def warm_starts(self):
        src = self.reference if self.best is None else self.best[1]
        X = src.states
        U = src.controls
        return [(X[a:b + 1], U[a:b]) for a, b in self.lam.segments]

    def evaluate(self, knots) -> StitchResult:
        res = reformulation_blackbox(
            self.spec, self.lam, knots, self.warm_starts(), self.config.segment_settings,
            workers=self.config.workers, attach_mayer=self.config.attach_mayer,
        )
        h = res.total_infeasibility
        key = (0, res.objective) if h <= self.config.feasibility_tolerance else (1, h)
        if self.best is None or key < self.best[0]:
            self.best = (key, res)
        self.results[np.asarray(knots, dtype=float).tobytes()] = res
        return res

    def __call__(self, knots):
        res = self.evaluate(knots)
        return res.objective, res.total_infeasibility


def knot_frame(spec: OcpSpec, lam: Lambda, states) -> np.ndarray:
    """Initial frame per knot component: a tenth of the uncontrolled range, at least 1."""
    span = np.ptp(states, axis=0)
    return np.tile(np.maximum(1.0, 0.1 * span), lam.r)


def run_hybrid(spec: OcpSpec, config: MethodConfig) -> RunRecord:
    t0 = time.perf_counter()
    tr, ih = _init(spec)
    on_knots_only = not config.attach_mayer
    lam_idx = Lambda.parse(config.lam, spec.steps).indices
    on_knots, loose = split_mayer(spec, lam_idx, attach=not on_knots_only)
    lam = Lambda(lam_idx, spec.steps, tuple(t.index for t in on_knots))
    bb = HybridBlackbox(spec, lam, config, tr)
    x0 = tr.states[list(lam.indices)].ravel()
    n = spec.n
    lo = np.tile(spec.knot_lower if spec.knot_lower is not None else np.full(n, -np.inf), lam.r)
    hi = np.tile(spec.knot_upper if spec.knot_upper is not None else np.full(n, np.inf), lam.r)
    x0 = np.clip(x0, lo, hi)
    if config.budget == 0:
        res = bb.evaluate(x0)
        return _hybrid_record(spec, config, res, ih, t0, None, lam, loose)
    settings = mads.MadsSettings(
        max_evaluations=config.budget, initial_frame_size=knot_frame(spec, lam, tr.states),
        min_mesh_size=config.min_mesh_size, feasibility_tolerance=config.feasibility_tolerance,
        seed=config.seed, lower=lo, upper=hi,
    )
    out = mads.solve(bb, x0, settings)
    best = out.best_feasible[0] if out.best_feasible is not None else out.best_infeasible[0]
    res = bb.results.get(np.asarray(best, dtype=float).tobytes())
    if res is None:
        res = bb.evaluate(best)
    return _hybrid_record(spec, config, res, ih, t0, out, lam, loose)


def _hybrid_record(spec, config, res: StitchResult, ih, t0, out, lam, loose):
    if out is None:
        status, evals, hist, trace, stats = res.status, 1, [], [], {}
    else:
        status = res.status if res.total_infeasibility <= config.feasibility_tolerance else Status.ITERATION_LIMIT
        evals, hist, trace = out.evaluations, out.history, out.h_max_trace
        stats = {"iterations": out.iterations, "stop_reason": out.stop_reason,
                 "feasible_found": out.best_feasible is not None}
    stats.update(knots=list(lam.indices), attached_mayer=[t.index for t in loose],
                 stitched_objective=res.objective, segment_infeasibility=res.total_infeasibility - res.terminal_violation)
    return _record(spec, config, res.states, res.controls, status, evals, ih, t0, hist, trace, stats,
                   infeas=res.total_infeasibility)


RUNNERS = {"so": run_so, "dfbbo": run_dfbbo, "hybrid": run_hybrid}


def run(spec: OcpSpec, config: MethodConfig) -> RunRecord:
    return RUNNERS[config.method](spec, config)


def compare(spec: OcpSpec, configs) -> list[RunRecord]:
    """Run every config from the same initialization; rows sorted by true objective."""
    records = [run(spec, c) for c in configs]
    if len({r.init_hash for r in records}) > 1:
        raise RuntimeError("methods did not share the uncontrolled initialization")
    return sorted(records, key=lambda r: r.true_objective)
