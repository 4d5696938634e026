"""Smooth local NLP solver.

Inner loop: projected limited-memory BFGS with Armijo backtracking on the box.
Outer loop: Powell-Hestenes-Rockafellar augmented Lagrangian over inequality
(``c(x) <= 0``) and equality (``e(x) = 0``) constraints.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from . import kernels

MULTIPLIER_CAP = 1e12


class Status(str, enum.Enum):
    CONVERGED = "Converged"
    ITERATION_LIMIT = "IterationLimit"
    LINE_SEARCH_FAILURE = "LineSearchFailure"


@dataclass(frozen=True)
class SolverSettings:
    max_outer_iterations: int = 30
    max_inner_iterations: int = 500
    gradient_tolerance: float = 1e-8
    constraint_tolerance: float = 1e-8
    initial_penalty: float = 10.0
    penalty_growth: float = 10.0
    armijo_c1: float = 1e-4
    backtrack_factor: float = 0.5
    memory: int = 10
    min_step: float = 1e-16
    max_penalty: float = 1e12

    def __post_init__(self):
        if self.gradient_tolerance <= 0 or self.constraint_tolerance <= 0:
            raise ValueError("tolerances must be positive")
        if self.penalty_growth <= 1:
            raise ValueError("penalty_growth must exceed 1")
        if not 0 < self.backtrack_factor < 1 or not 0 < self.armijo_c1 < 1:
            raise ValueError("invalid Armijo parameters")
        if self.memory < 1 or self.max_inner_iterations < 0 or self.max_outer_iterations < 1:
            raise ValueError("iteration counts and memory must be positive")

    def with_(self, **changes) -> "SolverSettings":
        return replace(self, **changes)

    @classmethod
    def from_dict(cls, data: dict) -> "SolverSettings":
        return cls(**{k: v for k, v in data.items() if k in cls.__dataclass_fields__})


@dataclass
class SolveReport:
    minimizer: np.ndarray
    objective: float
    violation: float
    status: Status
    iterations: int
    function_evaluations: int
    projected_gradient: float = math.nan
    outer_iterations: int = 0

    @property
    def converged(self) -> bool:
        return self.status is Status.CONVERGED


def _project(x, lo, hi):
    if lo is None and hi is None:
        return x
    return np.clip(x, lo if lo is not None else -np.inf, hi if hi is not None else np.inf)


def _projected_gradient(x, g, lo, hi):
    if lo is None and hi is None:
        return g
    return x - _project(x - g, lo, hi)


def _lbfgs(f, grad, x0, settings, lo=None, hi=None, gtol=None, max_iter=None,
           objective_floor=-np.inf):
    """Projected L-BFGS.  Returns a SolveReport whose ``objective`` is ``f``."""
    gtol = settings.gradient_tolerance if gtol is None else gtol
    max_iter = settings.max_inner_iterations if max_iter is None else max_iter
    x = _project(np.array(x0, dtype=float), lo, hi)
    n = x.size
    nfev = 1
    with np.errstate(all="ignore"):
        fx = float(f(x))
    if not math.isfinite(fx):
        return SolveReport(x, fx, math.nan, Status.LINE_SEARCH_FAILURE, 0, nfev)
    gx = np.asarray(grad(x), dtype=float)

    mem = settings.memory
    S = np.zeros((mem, n))
    Y = np.zeros((mem, n))
    rho = np.zeros(mem)
    start = count = 0
    lo_arr = np.full(n, -np.inf) if lo is None else np.broadcast_to(lo, (n,))
    hi_arr = np.full(n, np.inf) if hi is None else np.broadcast_to(hi, (n,))
    bounded = lo is not None or hi is not None

    status = Status.ITERATION_LIMIT
    pg_norm = math.inf
    it = 0
    for it in range(max_iter + 1):
        pg = _projected_gradient(x, gx, lo, hi)
        pg_norm = float(np.max(np.abs(pg))) if n else 0.0
        if pg_norm <= gtol or fx <= objective_floor:
            status = Status.CONVERGED
            break
        if it == max_iter:
            break

        if bounded:
            pinned = ((x <= lo_arr) & (gx > 0)) | ((x >= hi_arr) & (gx < 0))
            gfree = np.where(pinned, 0.0, gx)
        else:
            pinned = None
            gfree = gx

        retried = False
        while True:
            if count:
                d = -kernels.lbfgs_direction(gfree, S, Y, rho, start, count)
            else:
                d = -gfree / max(1.0, float(np.max(np.abs(gfree))))
            if pinned is not None:
                d[pinned] = 0.0
                d[(x <= lo_arr) & (d < 0)] = 0.0
                d[(x >= hi_arr) & (d > 0)] = 0.0
            slope = float(gx @ d)
            if count and not slope < 0:
                start = count = 0
                continue

            alpha = 1.0
            accepted = False
            while alpha >= settings.min_step:
                xt = _project(x + alpha * d, lo, hi)
                with np.errstate(all="ignore"):
                    ft = float(f(xt))
                nfev += 1
                if math.isfinite(ft) and ft <= fx + settings.armijo_c1 * float(gx @ (xt - x)):
                    accepted = True
                    break
                alpha *= settings.backtrack_factor
            if accepted or retried or not count:
                break
            # quasi-Newton model went bad: drop history, retry along the gradient
            start = count = 0
            retried = True

        if not accepted:
            status = Status.LINE_SEARCH_FAILURE
            break
        gt = np.asarray(grad(xt), dtype=float)
        s = xt - x
        y = gt - gx
        sy = float(s @ y)
        if sy > 1e-12 * math.sqrt(float(s @ s) * float(y @ y)) and sy > 0:
            slot = (start + count) % mem
            S[slot] = s
            Y[slot] = y
            rho[slot] = 1.0 / sy
            if count < mem:
                count += 1
            else:
                start = (start + 1) % mem
        x, fx, gx = xt, ft, gt

    return SolveReport(x, fx, math.nan, status, it, nfev, pg_norm)


def minimize_unconstrained(
    f: Callable,
    grad: Callable,
    x0,
    settings: Optional[SolverSettings] = None,
    bounds=None,
    objective_floor: float = -np.inf,
) -> SolveReport:
    """Minimize ``f`` over an optional box ``bounds = (lower, upper)``.

    Stops when the projected gradient is below ``gradient_tolerance`` (or ``f``
    reaches ``objective_floor``), otherwise returns the last iterate with status
    ``IterationLimit`` or ``LineSearchFailure``.
    """
    settings = settings or SolverSettings()
    lo, hi = bounds if bounds is not None else (None, None)
    report = _lbfgs(f, grad, x0, settings, lo, hi, objective_floor=objective_floor)
    report.violation = 0.0
    return report


def _max_violation(e, c):
    v = 0.0
    if e.size:
        v = float(np.max(np.abs(e)))
    if c.size:
        v = max(v, float(np.max(c)))
    return max(v, 0.0)


def minimize_constrained(problem, x0, settings: Optional[SolverSettings] = None) -> SolveReport:
    """Augmented-Lagrangian solve of an :class:`~hybridoc.problem.NlpProblem`.

    Convergence requires the projected gradient of the augmented Lagrangian
    below ``gradient_tolerance`` and the largest constraint violation below
    ``constraint_tolerance``.  Otherwise the best iterate seen is returned.
    """
    settings = settings or SolverSettings()
    lo, hi = problem.lower, problem.upper
    x = _project(np.array(x0, dtype=float), lo, hi)
    e0 = problem.eq(x)
    c0 = problem.ineq(x)
    if e0.size == 0 and c0.size == 0:
        return minimize_unconstrained(problem.objective, problem.grad, x, settings, bounds=(lo, hi))

    gtol = settings.gradient_tolerance
    ctol = settings.constraint_tolerance
    lam_e = np.zeros(e0.size)
    lam_c = np.zeros(c0.size)
    penalty = settings.initial_penalty

    def merit(z):
        e = problem.eq(z)
        c = problem.ineq(z)
        val = float(problem.objective(z))
        if e.size:
            val += float(lam_e @ e) + 0.5 * penalty * float(e @ e)
        if c.size:
            shifted = np.maximum(lam_c + penalty * c, 0.0)
            val += float(shifted @ shifted - lam_c @ lam_c) / (2.0 * penalty)
        return val

    def merit_grad(z):
        g = np.array(problem.grad(z), dtype=float)
        e = problem.eq(z)
        c = problem.ineq(z)
        if e.size:
            g += problem.eq_vjp(z, lam_e + penalty * e)
        if c.size:
            g += problem.ineq_vjp(z, np.maximum(lam_c + penalty * c, 0.0))
        return g

    def candidate_key(z, phi, viol):
        return (0, phi) if viol <= ctol else (1, viol)

    phi0 = float(problem.objective(x))
    viol0 = _max_violation(e0, c0)
    best = (candidate_key(x, phi0, viol0), x, phi0)
    nfev = 1
    iters = 0
    last_status = Status.ITERATION_LIMIT
    comp_prev = math.inf
    status = Status.ITERATION_LIMIT
    converged_x = None
    outer = 0
    for outer in range(1, settings.max_outer_iterations + 1):
        inner_tol = max(gtol, 1e-3 * 0.1 ** (outer - 1))
        start_val = merit(x)
        rep = _lbfgs(merit, merit_grad, x, settings, lo, hi, gtol=inner_tol)
        nfev += rep.function_evaluations
        iters += rep.iterations
        if math.isfinite(start_val):
            # inner solver is monotone on the merit function it was handed
            assert rep.objective <= start_val + 1e-9 * max(1.0, abs(start_val)), "merit increased"
        x = rep.minimizer
        last_status = rep.status
        e = problem.eq(x)
        c = problem.ineq(x)
        phi = float(problem.objective(x))
        viol = _max_violation(e, c)
        key = candidate_key(x, phi, viol)
        if key < best[0]:
            best = (key, x, phi)
        if viol <= ctol and rep.status is Status.CONVERGED and rep.projected_gradient <= gtol:
            status = Status.CONVERGED
            converged_x = (x, phi)
            break
        comp = viol
        if c.size:
            comp = max(comp, float(np.max(np.abs(np.minimum(-c, lam_c / penalty)))))
        if e.size:
            lam_e = lam_e + penalty * e
        if c.size:
            lam_c = np.clip(lam_c + penalty * c, 0.0, MULTIPLIER_CAP)
        if comp > 0.25 * comp_prev:
            penalty = min(penalty * settings.penalty_growth, settings.max_penalty)
        comp_prev = comp
        if rep.status is Status.LINE_SEARCH_FAILURE and viol <= ctol:
            break

    if converged_x is not None:
        xf, phi = converged_x
    else:
        _, xf, phi = best
        status = Status.LINE_SEARCH_FAILURE if last_status is Status.LINE_SEARCH_FAILURE else Status.ITERATION_LIMIT
    e = problem.eq(xf)
    c = problem.ineq(xf)
    h = float(e @ e) + float(np.sum(np.maximum(c, 0.0) ** 2))
    pg = float(np.max(np.abs(_projected_gradient(xf, merit_grad(xf), lo, hi)))) if xf.size else 0.0
    return SolveReport(xf, phi, h, status, iters, nfev, pg, outer)
