"""Finite-dimensional constrained problems and the two-phase blackbox.

A problem is ``min phi(x)`` subject to ``c(x) <= 0``, ``e(x) = 0`` and an
optional box.  Splitting the variables into singular ones ``y`` and smooth ones
``z`` gives, for each ``y``, a smooth subproblem in ``z``; the two-phase
evaluator turns that subproblem into a finite ``(objective, infeasibility)``
pair suitable for a progressive-barrier direct search.
"""

from __future__ import annotations

import enum
import logging
import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .smooth import (
    SolverSettings,
    SolveReport,
    Status,
    minimize_constrained,
    minimize_unconstrained,
)

logger = logging.getLogger(__name__)

_EMPTY = np.zeros(0)


class EvaluationError(ArithmeticError):
    """A constraint or objective produced a non-finite value."""

    def __init__(self, message: str, index: Optional[int] = None):
        super().__init__(message)
        self.index = index


def _fd_step(x):
    return 1e-6 * np.maximum(1.0, np.abs(x))


def fd_gradient(fun: Callable, x: np.ndarray) -> np.ndarray:
    """Central-difference gradient with step ``1e-6 * max(1, |x_i|)``."""
    x = np.asarray(x, dtype=float)
    steps = _fd_step(x)
    g = np.empty_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += steps[i]
        xm[i] -= steps[i]
        g[i] = (fun(xp) - fun(xm)) / (2.0 * steps[i])
    return g


@dataclass(frozen=True, eq=False)
class NlpProblem:
    """``min objective(x)`` s.t. ``inequalities(x) <= 0``, ``equalities(x) == 0``.

    Constraint maps are vector valued.  Their derivatives are supplied as
    vector-Jacobian products ``(x, w) -> J(x).T @ w``; when absent, central
    finite differences are used.
    """

    n: int
    objective: Callable[[np.ndarray], float]
    objective_gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None
    inequalities: Optional[Callable[[np.ndarray], np.ndarray]] = None
    equalities: Optional[Callable[[np.ndarray], np.ndarray]] = None
    inequality_vjp: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    equality_vjp: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    name: str = ""

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 0:
            raise ValueError(f"dimension must be a non-negative integer, got {self.n}")
        for attr in ("lower", "upper"):
            val = getattr(self, attr)
            if val is not None:
                arr = np.broadcast_to(np.asarray(val, dtype=float), (self.n,)).copy()
                object.__setattr__(self, attr, arr)

    @classmethod
    def from_functions(
        cls,
        n: int,
        objective: Callable,
        inequality_constraints: Sequence[Callable] = (),
        equality_constraints: Sequence[Callable] = (),
        objective_gradient: Optional[Callable] = None,
        inequality_gradients: Optional[Sequence[Callable]] = None,
        equality_gradients: Optional[Sequence[Callable]] = None,
        bounds=None,
        name: str = "",
    ) -> "NlpProblem":
        """Build a problem from lists of scalar constraint maps."""
        ineq = list(inequality_constraints)
        eq = list(equality_constraints)

        def stack(funcs):
            if not funcs:
                return None
            return lambda x: np.array([float(fn(x)) for fn in funcs])

        def vjp(grads):
            if not grads:
                return None

            def apply(x, w):
                out = np.zeros(n)
                for wi, gfun in zip(w, grads):
                    if wi:
                        out += wi * np.asarray(gfun(x), dtype=float)
                return out

            return apply

        lower, upper = bounds if bounds is not None else (None, None)
        return cls(
            n=n,
            objective=objective,
            objective_gradient=objective_gradient,
            inequalities=stack(ineq),
            equalities=stack(eq),
            inequality_vjp=vjp(inequality_gradients) if ineq else None,
            equality_vjp=vjp(equality_gradients) if eq else None,
            lower=lower,
            upper=upper,
            name=name,
        )

    # -- evaluation helpers (finite-difference fallbacks) --------------------

    def grad(self, x) -> np.ndarray:
        if self.objective_gradient is not None:
            return np.asarray(self.objective_gradient(x), dtype=float)
        return fd_gradient(self.objective, x)

    def ineq(self, x) -> np.ndarray:
        if self.inequalities is None:
            return _EMPTY
        return np.asarray(self.inequalities(x), dtype=float).ravel()

    def eq(self, x) -> np.ndarray:
        if self.equalities is None:
            return _EMPTY
        return np.asarray(self.equalities(x), dtype=float).ravel()

    def ineq_vjp(self, x, w) -> np.ndarray:
        if self.inequality_vjp is not None:
            return np.asarray(self.inequality_vjp(x, w), dtype=float)
        return fd_gradient(lambda z: float(w @ self.ineq(z)), x)

    def eq_vjp(self, x, w) -> np.ndarray:
        if self.equality_vjp is not None:
            return np.asarray(self.equality_vjp(x, w), dtype=float)
        return fd_gradient(lambda z: float(w @ self.eq(z)), x)

    @property
    def has_constraints(self) -> bool:
        return self.inequalities is not None or self.equalities is not None

    def project(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.lower is None and self.upper is None:
            return x.copy()
        lo = self.lower if self.lower is not None else -np.inf
        hi = self.upper if self.upper is not None else np.inf
        return np.clip(x, lo, hi)


@dataclass(frozen=True)
class Partition:
    """Split of ``n`` variables into ``p`` singular and ``q = n - p`` smooth ones."""

    n: int
    singular_indices: tuple[int, ...] = ()

    def __post_init__(self):
        idx = tuple(int(i) for i in self.singular_indices)
        if list(idx) != sorted(set(idx)):
            raise ValueError("singular indices must be sorted and distinct")
        if idx and (idx[0] < 0 or idx[-1] >= self.n):
            raise ValueError("singular index out of range")
        object.__setattr__(self, "singular_indices", idx)

    @property
    def p(self) -> int:
        return len(self.singular_indices)

    @property
    def q(self) -> int:
        return self.n - self.p

    @property
    def smooth_indices(self) -> tuple[int, ...]:
        s = set(self.singular_indices)
        return tuple(i for i in range(self.n) if i not in s)

    def merge(self, y, z) -> np.ndarray:
        y = np.asarray(y, dtype=float).ravel()
        z = np.asarray(z, dtype=float).ravel()
        if y.size != self.p or z.size != self.q:
            raise ValueError(f"expected y of size {self.p} and z of size {self.q}")
        x = np.empty(self.n)
        x[list(self.singular_indices)] = y
        x[list(self.smooth_indices)] = z
        return x

    def split(self, x) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=float)
        return x[list(self.singular_indices)], x[list(self.smooth_indices)]


class FeasibilityTag(str, enum.Enum):
    EPS_INFEASIBLE = "EpsInfeasible"
    EPS_FEASIBLE_UNDEFINED = "EpsFeasibleUndefined"
    EPS_FD = "EpsFD"
    EPS_FWD = "EpsFWD"


@dataclass(frozen=True)
class FeasibilityClass:
    tag: FeasibilityTag
    epsilon: float

    @property
    def is_fd(self) -> bool:
        return self.tag in (FeasibilityTag.EPS_FD, FeasibilityTag.EPS_FWD)


@dataclass
class BlackboxResult:
    infeasibility: float
    objective: float
    smooth_minimizer: np.ndarray
    phase1_minimizer: np.ndarray
    solver_status: Status

    def __post_init__(self):
        if not (math.isfinite(self.infeasibility) and math.isfinite(self.objective)):
            raise EvaluationError("blackbox produced a non-finite value")
        if self.infeasibility < 0:
            raise ValueError("infeasibility must be non-negative")


# -- constraint violation -----------------------------------------------------


def _checked(values: np.ndarray, kind: str, offset: int = 0) -> np.ndarray:
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise EvaluationError(f"non-finite {kind} constraint {int(bad[0])}", int(bad[0]) + offset)
    return values


def violation(problem: NlpProblem, x) -> float:
    """Sum of squared positive inequality parts plus squared equality residuals."""
    x = np.asarray(x, dtype=float)
    if x.shape != (problem.n,):
        raise ValueError(f"expected a vector of length {problem.n}, got shape {x.shape}")
    c = _checked(problem.ineq(x), "inequality")
    e = _checked(problem.eq(x), "equality", offset=c.size)
    return float(np.sum(np.maximum(c, 0.0) ** 2) + np.sum(e**2))


def _violation_unchecked(problem: NlpProblem, x) -> float:
    c = problem.ineq(x)
    e = problem.eq(x)
    return float(np.sum(np.maximum(c, 0.0) ** 2) + np.sum(e**2))


def violation_gradient(problem: NlpProblem, x) -> np.ndarray:
    g = np.zeros(problem.n)
    c = problem.ineq(x)
    if c.size:
        g += problem.ineq_vjp(x, 2.0 * np.maximum(c, 0.0))
    e = problem.eq(x)
    if e.size:
        g += problem.eq_vjp(x, 2.0 * e)
    return g


# -- restriction to the smooth variables --------------------------------------


def restrict(problem: NlpProblem, partition: Partition, y) -> NlpProblem:
    """The subproblem in ``z`` with the singular variables frozen at ``y``."""
    y = np.asarray(y, dtype=float).ravel()
    if partition.n != problem.n:
        raise ValueError("partition does not match problem dimension")
    if y.size != partition.p:
        raise ValueError(f"expected y of length {partition.p}, got {y.size}")
    if partition.p == 0:
        return problem
    zi = list(partition.smooth_indices)
    merge = lambda z: partition.merge(y, z)  # noqa: E731

    def sub(fn):
        return None if fn is None else (lambda z: fn(merge(z)))

    def sub_vec(fn):
        return lambda z: fn(merge(z))[zi]

    def sub_vjp(fn, present):
        if not present:
            return None
        return lambda z, w: fn(merge(z), w)[zi]

    return NlpProblem(
        n=partition.q,
        objective=lambda z: problem.objective(merge(z)),
        objective_gradient=sub_vec(problem.grad),
        inequalities=sub(problem.inequalities),
        equalities=sub(problem.equalities),
        inequality_vjp=sub_vjp(problem.ineq_vjp, problem.inequalities is not None),
        equality_vjp=sub_vjp(problem.eq_vjp, problem.equalities is not None),
        lower=None if problem.lower is None else problem.lower[zi],
        upper=None if problem.upper is None else problem.upper[zi],
        name=f"{problem.name}|y" if problem.name else "",
    )


# -- the two-phase process ----------------------------------------------------


def phase1(problem: NlpProblem, partition: Partition, y, z0, settings: Optional[SolverSettings] = None):
    """Minimize the violation over ``z``.  Returns ``(z_tilde, mu_tilde, report)``."""
    settings = settings or SolverSettings()
    sub = restrict(problem, partition, y)
    z0 = sub.project(np.asarray(z0, dtype=float).ravel())
    if not sub.has_constraints:
        report = SolveReport(z0, 0.0, 0.0, Status.CONVERGED, 0, 0, 0.0)
        return z0, 0.0, report
    report = minimize_unconstrained(
        lambda z: _violation_unchecked(sub, z),
        lambda z: violation_gradient(sub, z),
        z0,
        settings,
        bounds=(sub.lower, sub.upper),
        objective_floor=0.0,
    )
    z = report.minimizer
    mu = _violation_unchecked(sub, z)
    if not math.isfinite(mu):
        z, mu = z0, _violation_unchecked(sub, z0)
    return z, float(mu), report


def _threshold_problem(sub: NlpProblem, mu: float) -> NlpProblem:
    """``sub`` with its constraints aggregated into ``h(z) - mu <= 0``."""
    return NlpProblem(
        n=sub.n,
        objective=sub.objective,
        objective_gradient=sub.grad,
        inequalities=lambda z: np.array([_violation_unchecked(sub, z) - mu]),
        inequality_vjp=lambda z, w: w[0] * violation_gradient(sub, z),
        lower=sub.lower,
        upper=sub.upper,
    )


def phase2(
    problem: NlpProblem,
    partition: Partition,
    y,
    z_tilde,
    mu_tilde: float,
    settings: Optional[SolverSettings] = None,
) -> BlackboxResult:
    """Minimize the objective over ``{z : h(z) <= mu_tilde}`` from ``z_tilde``.

    When ``mu_tilde`` is below the constraint tolerance the original constraints
    are used directly (same feasible set, better conditioned).  The phase-1
    point stays a fallback candidate so the returned infeasibility never
    exceeds ``mu_tilde`` by more than the tolerance.
    """
    settings = settings or SolverSettings()
    sub = restrict(problem, partition, y)
    z_tilde = np.asarray(z_tilde, dtype=float).ravel()
    tol = settings.constraint_tolerance
    if not sub.has_constraints:
        report = minimize_unconstrained(sub.objective, sub.grad, z_tilde, settings, bounds=(sub.lower, sub.upper))
    elif mu_tilde <= tol:
        report = minimize_constrained(sub, z_tilde, settings)
    else:
        report = minimize_constrained(_threshold_problem(sub, mu_tilde), z_tilde, settings)

    candidates = []
    for z in (report.minimizer, z_tilde):
        with np.errstate(all="ignore"):
            phi = float(sub.objective(z))
            h = _violation_unchecked(sub, z)
        if math.isfinite(phi) and math.isfinite(h):
            ok = h <= mu_tilde + tol
            candidates.append(((0, phi) if ok else (1, h), z, phi, h))
    if not candidates:
        raise EvaluationError("objective is not finite at either phase iterate")
    _, z, phi, h = min(candidates, key=lambda item: item[0])
    return BlackboxResult(
        infeasibility=max(h, 0.0),
        objective=phi,
        smooth_minimizer=z,
        phase1_minimizer=z_tilde,
        solver_status=report.status,
    )


def evaluate_blackbox(
    problem: NlpProblem,
    partition: Partition,
    y,
    warm_start=None,
    settings: Optional[SolverSettings] = None,
) -> BlackboxResult:
    """Phase 1 then phase 2 at ``y``; deterministic for fixed inputs."""
    settings = settings or SolverSettings()
    z0 = np.zeros(partition.q) if warm_start is None else np.asarray(warm_start, dtype=float)
    z_tilde, mu, rep1 = phase1(problem, partition, y, z0, settings)
    result = phase2(problem, partition, y, z_tilde, mu, settings)
    if rep1.status is not Status.CONVERGED and result.solver_status is Status.CONVERGED:
        result.solver_status = rep1.status
    return result


@dataclass
class BlackboxEvaluator:
    """Cached two-phase blackbox ``y -> (objective, infeasibility)``.

    Results are keyed by ``y`` rounded to ``1e-9``; the cache is thread safe.
    """

    problem: NlpProblem
    partition: Partition
    settings: SolverSettings = field(default_factory=SolverSettings)
    warm_start: Optional[np.ndarray] = None
    quantum: float = 1e-9
    _cache: dict = field(default_factory=dict, init=False, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False)

    def key(self, y) -> tuple:
        return tuple(int(round(v / self.quantum)) for v in np.asarray(y, dtype=float).ravel())

    def __call__(self, y, warm_start=None) -> BlackboxResult:
        k = self.key(y)
        with self._lock:
            hit = self._cache.get(k)
        if hit is not None:
            return hit
        ws = warm_start if warm_start is not None else self.warm_start
        result = evaluate_blackbox(self.problem, self.partition, y, ws, self.settings)
        with self._lock:
            return self._cache.setdefault(k, result)

    def fh(self, y) -> tuple[float, float]:
        r = self(y)
        return r.objective, r.infeasibility

    @property
    def cache_size(self) -> int:
        return len(self._cache)


# -- feasibility diagnostics --------------------------------------------------


def _relaxed(problem: NlpProblem, epsilon: float) -> NlpProblem:
    if epsilon <= 0 or not problem.has_constraints:
        return problem
    return _threshold_problem(problem, epsilon)


def classify(
    problem: NlpProblem,
    epsilon: float,
    sampler: Callable[[np.random.Generator], np.ndarray],
    budget: int,
    seed: int = 0,
    settings: Optional[SolverSettings] = None,
) -> FeasibilityClass:
    """Sampling-plus-local-solve diagnostic of epsilon-feasibility.

    Sound but incomplete: EpsInfeasible means no sampled or locally solved point
    reached ``h <= epsilon``; EpsFWD means a local solve converged to a point
    that stays put when the tolerances are tightened.
    """
    if budget < 1:
        raise ValueError("budget must be at least 1")
    settings = settings or SolverSettings()
    rng = np.random.default_rng(seed)
    points = [problem.project(np.asarray(sampler(rng), dtype=float)) for _ in range(budget)]

    def h(x):
        with np.errstate(all="ignore"):
            v = _violation_unchecked(problem, x)
        return v if math.isfinite(v) else math.inf

    if problem.has_constraints:
        ranked = sorted(points, key=h)[:3]
        for x in ranked:
            rep = minimize_unconstrained(
                lambda z: _violation_unchecked(problem, z),
                lambda z: violation_gradient(problem, z),
                x,
                settings,
                bounds=(problem.lower, problem.upper),
                objective_floor=0.0,
            )
            points.append(rep.minimizer)

    feasible = [x for x in points if h(x) <= epsilon]
    if not feasible:
        return FeasibilityClass(FeasibilityTag.EPS_INFEASIBLE, epsilon)

    def phi(x):
        with np.errstate(all="ignore"):
            return float(problem.objective(x))

    start = min(feasible, key=phi)
    relaxed = _relaxed(problem, epsilon)
    runs = []
    x = start
    for budget_i, tol in ((100, 1e-6), (1000, 1e-10), (10000, 1e-14)):
        s = settings.with_(max_inner_iterations=budget_i, gradient_tolerance=tol, constraint_tolerance=max(tol, 1e-12))
        rep = minimize_constrained(relaxed, x, s)
        runs.append(rep)
        x = rep.minimizer

    values = [r.objective for r in runs]
    if not all(math.isfinite(v) for v in values) or values[-1] < -1e12:
        return FeasibilityClass(FeasibilityTag.EPS_FEASIBLE_UNDEFINED, epsilon)
    drop1 = values[0] - values[1]
    drop2 = values[1] - values[2]
    if drop2 > 1e-8 and drop2 >= 0.5 * drop1:
        return FeasibilityClass(FeasibilityTag.EPS_FEASIBLE_UNDEFINED, epsilon)
    x1, x2 = runs[1].minimizer, runs[2].minimizer
    stable = float(np.max(np.abs(x2 - x1), initial=0.0)) <= 1e-4 * (1.0 + float(np.max(np.abs(x1), initial=0.0)))
    if stable and runs[2].converged:
        return FeasibilityClass(FeasibilityTag.EPS_FWD, epsilon)
    return FeasibilityClass(FeasibilityTag.EPS_FD, epsilon)


# -- brute-force grid oracles -------------------------------------------------


def grid_minimum(problem: NlpProblem, axes: Sequence[np.ndarray]) -> float:
    """Minimum of the objective over feasible points of a tensor grid (``inf`` if none)."""
    best = math.inf
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))
    for x in mesh:
        if _violation_unchecked(problem, x) == 0.0:
            best = min(best, float(problem.objective(x)))
    return best


def nested_grid_minimum(problem: NlpProblem, partition: Partition, axes: Sequence[np.ndarray]) -> float:
    """Minimum over the singular-variable grid of the grid minimum of each subproblem."""
    y_axes = [axes[i] for i in partition.singular_indices]
    z_axes = [axes[i] for i in partition.smooth_indices]
    best = math.inf
    ys = np.stack(np.meshgrid(*y_axes, indexing="ij"), axis=-1).reshape(-1, len(y_axes)) if y_axes else [np.zeros(0)]
    for y in ys:
        sub = restrict(problem, partition, y)
        inner = grid_minimum(sub, z_axes) if z_axes else (
            float(sub.objective(np.zeros(0))) if _violation_unchecked(sub, np.zeros(0)) == 0.0 else math.inf
        )
        best = min(best, inner)
    return best
