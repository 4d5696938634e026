"""Mesh adaptive direct search with a progressive barrier.

Each evaluation returns an objective ``f`` and an infeasibility ``h >= 0``.
Feasible points (``h <= feasibility_tolerance``) compete for the feasible
incumbent; infeasible ones populate an undominated ``(f, h)`` front truncated
at a barrier threshold ``h_max`` that only decreases.  Polling uses ``2p``
directions from a seeded random orthonormal basis and its negation.
"""

from __future__ import annotations

import csv
import enum
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MadsSettings:
    max_evaluations: int = 1000
    initial_frame_size: float | Sequence[float] = 1.0
    min_mesh_size: float = 1e-9
    h_max_initial: float = math.inf
    feasibility_tolerance: float = 1e-9
    opportunistic: bool = True
    seed: int = 0
    lower: Optional[Sequence[float]] = None
    upper: Optional[Sequence[float]] = None
    workers: int = 1

    def __post_init__(self):
        if self.min_mesh_size <= 0:
            raise ValueError("min_mesh_size must be positive")
        if self.max_evaluations < 1:
            raise ValueError("max_evaluations must be at least 1")
        if np.any(np.asarray(self.initial_frame_size, dtype=float) <= 0):
            raise ValueError("initial frame size must be positive")


@dataclass
class Evaluation:
    index: int
    point: np.ndarray
    f: float
    h: float
    feasible: bool
    feasible_incumbent: bool = False
    infeasible_incumbent: bool = False


@dataclass
class MadsState:
    """Mesh/frame sizes (in scaled units), incumbents and the barrier front."""

    frame_size: float
    feasible_incumbent: Optional[tuple[np.ndarray, float]] = None
    infeasible_front: list = field(default_factory=list)  # (point, f, h, order)
    h_max: float = math.inf
    evaluation_count: int = 0
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))

    @property
    def mesh_size(self) -> float:
        return min(self.frame_size, self.frame_size**2)

    @property
    def infeasible_incumbent(self):
        """Front member with the lowest ``f`` (ties: lower ``h``, then earlier)."""
        if not self.infeasible_front:
            return None
        return min(self.infeasible_front, key=lambda e: (e[1], e[2], e[3]))


class IterationOutcome(enum.Enum):
    DOMINATING = "dominating"
    IMPROVING = "improving"
    UNSUCCESSFUL = "unsuccessful"


@dataclass
class MadsResult:
    best_feasible: Optional[tuple[np.ndarray, float]]
    best_infeasible: Optional[tuple[np.ndarray, float, float]]
    history: list
    h_max_trace: list
    frame_trace: list
    iterations: int
    evaluations: int
    stop_reason: str

    def history_csv(self) -> str:
        return history_to_csv(self.history)


def history_to_csv(history: Sequence[Evaluation]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    p = history[0].point.size if history else 0
    writer.writerow(["eval_index", *[f"y{i + 1}" for i in range(p)], "f", "h", "feasible",
                     "feasible_incumbent", "infeasible_incumbent"])
    for ev in history:
        writer.writerow([ev.index, *[repr(float(v)) for v in ev.point], repr(ev.f), repr(ev.h),
                         int(ev.feasible), int(ev.feasible_incumbent), int(ev.infeasible_incumbent)])
    return buf.getvalue()


def _dominates(a, b) -> bool:
    """``a`` dominates ``b`` on ``(f, h)``."""
    return a[0] <= b[0] and a[1] <= b[1] and (a[0] < b[0] or a[1] < b[1])


def random_orthonormal_basis(rng: np.random.Generator, p: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((p, p)))
    return q * np.sign(np.diag(r))


class _Geometry:
    """Maps between scaled lattice coordinates and user coordinates."""

    def __init__(self, x0, settings: MadsSettings):
        self.x0 = np.asarray(x0, dtype=float).copy()
        p = self.x0.size
        self.scale = np.broadcast_to(np.asarray(settings.initial_frame_size, dtype=float), (p,)).copy()
        self.lower = None if settings.lower is None else np.broadcast_to(np.asarray(settings.lower, dtype=float), (p,))
        self.upper = None if settings.upper is None else np.broadcast_to(np.asarray(settings.upper, dtype=float), (p,))

    def to_user(self, xi):
        x = self.x0 + self.scale * xi
        if self.lower is not None or self.upper is not None:
            x = np.clip(x, self.lower if self.lower is not None else -np.inf,
                        self.upper if self.upper is not None else np.inf)
        return x

    def to_scaled(self, x):
        return (np.asarray(x, dtype=float) - self.x0) / self.scale


def poll_step(state: MadsState, center, settings: MadsSettings | None = None, basis: np.ndarray | None = None):
    """Poll points ``center +/- frame * d_i`` rounded onto the mesh lattice.

    ``center`` is in scaled lattice coordinates (lattice anchored at the
    starting point).  Directions are the columns of a fresh random orthonormal
    basis drawn from ``state.rng`` and their negatives, each rescaled so its
    largest component equals the frame size.
    """
    center = np.asarray(center, dtype=float)
    p = center.size
    if state.mesh_size <= 0:
        raise ValueError("mesh size must be positive")
    if basis is None:
        basis = random_orthonormal_basis(state.rng, p)
    delta_m = state.mesh_size
    points = []
    for sign in (1.0, -1.0):
        for i in range(p):
            d = sign * basis[:, i]
            step = state.frame_size * d / np.max(np.abs(d))
            points.append(np.round((center + step) / delta_m) * delta_m)
    return points


def update_barrier(state: MadsState, evaluations, tolerance: float = 1e-9, order_start: int = 0) -> IterationOutcome:
    """Fold new ``(point, f, h)`` evaluations into the incumbents and front.

    Returns the iteration outcome; frame-size changes are left to the caller.
    """
    prev_feasible = state.feasible_incumbent
    prev_inf = state.infeasible_incumbent
    outcome = IterationOutcome.UNSUCCESSFUL
    dominated_prev = False
    improved_h = False
    for j, (point, f, h) in enumerate(evaluations):
        point = np.asarray(point, dtype=float)
        if not (math.isfinite(f) and math.isfinite(h)) or h < 0:
            continue
        if h <= tolerance:
            if state.feasible_incumbent is None or f < state.feasible_incumbent[1]:
                state.feasible_incumbent = (point, f)
                outcome = IterationOutcome.DOMINATING
            continue
        if h > state.h_max:
            continue
        entry = (point, f, h, order_start + j)
        if any(_dominates((e[1], e[2]), (f, h)) or (e[1] == f and e[2] == h) for e in state.infeasible_front):
            continue
        state.infeasible_front = [e for e in state.infeasible_front if not _dominates((f, h), (e[1], e[2]))]
        state.infeasible_front.append(entry)
        if prev_inf is not None:
            if _dominates((f, h), (prev_inf[1], prev_inf[2])):
                dominated_prev = True
            elif h < prev_inf[2]:
                improved_h = True
        elif prev_feasible is None:
            # first infeasible point of a run without incumbents
            dominated_prev = True

    if dominated_prev:
        outcome = IterationOutcome.DOMINATING
        if state.infeasible_front:
            state.h_max = min(state.h_max, max(e[2] for e in state.infeasible_front))
    elif improved_h and outcome is not IterationOutcome.DOMINATING:
        outcome = IterationOutcome.IMPROVING
    state.infeasible_front = [e for e in state.infeasible_front if e[2] <= state.h_max]
    return outcome


def solve(
    blackbox: Callable[[np.ndarray], tuple[float, float]],
    x0,
    settings: MadsSettings | None = None,
    callback: Optional[Callable[[MadsState], None]] = None,
) -> MadsResult:
    """Minimize ``f`` subject to ``h <= feasibility_tolerance`` from ``x0``."""
    settings = settings or MadsSettings()
    geo = _Geometry(x0, settings)
    p = geo.x0.size
    state = MadsState(frame_size=1.0, h_max=settings.h_max_initial, rng=np.random.default_rng(settings.seed))
    history: list[Evaluation] = []
    cache: dict = {}
    h_trace: list[float] = []
    frame_trace: list[float] = []
    pool = ThreadPoolExecutor(settings.workers) if settings.workers > 1 else None

    def key(x):
        return tuple(np.round(x / 1e-13).astype(np.int64).tolist()) if np.all(np.abs(x) < 1e5) else tuple(x.tolist())

    def run_blackbox(x):
        try:
            f, h = blackbox(x)
            return float(f), float(h)
        except ArithmeticError as exc:
            logger.debug("blackbox failed at %s: %s", x, exc)
            return math.nan, math.nan

    def evaluate(points_scaled):
        """Evaluate new points; returns list of (scaled point, f, h) in input order."""
        todo = []
        out = []
        for xi in points_scaled:
            x = geo.to_user(xi)
            k = key(x)
            if k in cache:
                out.append(None)
                continue
            if state.evaluation_count + len(todo) >= settings.max_evaluations:
                break
            cache[k] = None
            todo.append((xi, x, k))
            out.append(len(todo) - 1)
        if pool is not None and len(todo) > 1:
            values = list(pool.map(lambda item: run_blackbox(item[1]), todo))
        else:
            values = [run_blackbox(item[1]) for item in todo]
        results = []
        for (xi, x, k), (f, h) in zip(todo, values):
            cache[k] = (f, h)
            state.evaluation_count += 1
            feasible = math.isfinite(h) and h <= settings.feasibility_tolerance
            history.append(Evaluation(state.evaluation_count - 1, x, f, h, feasible))
            if not (math.isfinite(f) and math.isfinite(h)):
                logger.info("discarding non-finite evaluation at %s", x)
            results.append((geo.to_scaled(x), f, h))
        return results

    def mark_incumbents():
        if history:
            fi = state.feasible_incumbent
            ii = state.infeasible_incumbent
            last = history[-1]
            last.feasible_incumbent = fi is not None and np.array_equal(geo.to_user(fi[0]), last.point)
            last.infeasible_incumbent = ii is not None and np.array_equal(geo.to_user(ii[0]), last.point)

    # starting point
    start = evaluate([np.zeros(p)])
    update_barrier(state, start, settings.feasibility_tolerance, order_start=0)
    mark_incumbents()
    h_trace.append(state.h_max)
    frame_trace.append(state.frame_size)

    iterations = 0
    stop_reason = "budget"
    while True:
        if state.mesh_size < settings.min_mesh_size:
            stop_reason = "mesh"
            break
        if state.evaluation_count >= settings.max_evaluations:
            stop_reason = "budget"
            break
        iterations += 1
        centers = []
        inf_inc = state.infeasible_incumbent
        if state.feasible_incumbent is not None:
            centers.append(state.feasible_incumbent[0])
        if inf_inc is not None:
            centers.append(inf_inc[0])
        if not centers:
            stop_reason = "no-incumbent"
            break
        basis = random_orthonormal_basis(state.rng, p)
        outcome = IterationOutcome.UNSUCCESSFUL
        new_points = []
        for center in centers:
            poll = poll_step(state, center, settings, basis=basis)
            if settings.opportunistic and pool is None:
                for xi in poll:
                    res = evaluate([xi])
                    if not res:
                        continue
                    new_points.extend(res)
                    o = update_barrier(state, res, settings.feasibility_tolerance, order_start=len(history))
                    mark_incumbents()
                    outcome = _merge_outcome(outcome, o)
                    if o is IterationOutcome.DOMINATING:
                        break
            else:
                res = evaluate(poll)
                new_points.extend(res)
                # canonical order: direction index
                for item in res:
                    o = update_barrier(state, [item], settings.feasibility_tolerance, order_start=len(history))
                    outcome = _merge_outcome(outcome, o)
                mark_incumbents()
            if outcome is IterationOutcome.DOMINATING or state.evaluation_count >= settings.max_evaluations:
                break

        if outcome is IterationOutcome.DOMINATING:
            state.frame_size *= 2.0
        elif outcome is IterationOutcome.UNSUCCESSFUL:
            state.frame_size *= 0.5
        h_trace.append(state.h_max)
        frame_trace.append(state.frame_size)
        if callback is not None:
            callback(state)

    if pool is not None:
        pool.shutdown()

    best_feasible = None
    if state.feasible_incumbent is not None:
        best_feasible = (geo.to_user(state.feasible_incumbent[0]), state.feasible_incumbent[1])
    best_infeasible = None
    inc = state.infeasible_incumbent
    if inc is not None:
        best_infeasible = (geo.to_user(inc[0]), inc[1], inc[2])
    return MadsResult(best_feasible, best_infeasible, history, h_trace, frame_trace, iterations,
                      state.evaluation_count, stop_reason)


def _merge_outcome(a: IterationOutcome, b: IterationOutcome) -> IterationOutcome:
    rank = {IterationOutcome.UNSUCCESSFUL: 0, IterationOutcome.IMPROVING: 1, IterationOutcome.DOMINATING: 2}
    return a if rank[a] >= rank[b] else b
