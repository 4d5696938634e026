"""Discrete optimal control problems and their transcriptions.

A problem is stepped with classical RK4 on a uniform grid ``t_k = k * dt``
(controls held over each step), the running cost is summed with the left
rectangle rule, and the Mayer cost is a sum of per-index terms.

Two transcriptions are built from the same machinery:

* :func:`transcribe_full` - all states ``x_1..x_N`` and controls free.
* :func:`segment_subproblem` - states strictly between two fixed knots.

:func:`reformulation_blackbox` stitches segment solves between knot states.
"""

from __future__ import annotations

import csv
import io
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels
from .dynamics import Dynamics
from .problem import (
    BlackboxResult,
    EvaluationError,
    NlpProblem,
    Partition,
    _violation_unchecked,
    evaluate_blackbox,
)
from .smooth import SolverSettings, Status

DIVERGENCE_LIMIT = 1e12


# -- problem ingredients ------------------------------------------------------


@dataclass(frozen=True)
class ControlCost:
    """Running cost linear in the controls: ``l(t, x, u) = weights @ u``."""

    weights: tuple[float, ...]

    def value(self, t, X, U):
        return U @ np.asarray(self.weights)

    def gradients(self, t, X, U):
        return np.zeros_like(X), np.broadcast_to(np.asarray(self.weights, dtype=float), U.shape)


@dataclass(frozen=True)
class FunctionCost:
    """Running cost from a vectorized ``value(t, X, U) -> (K,)``; gradients optional."""

    fn: Callable
    grad: Optional[Callable] = None

    def value(self, t, X, U):
        return np.asarray(self.fn(t, X, U), dtype=float)

    def gradients(self, t, X, U):
        if self.grad is not None:
            gx, gu = self.grad(t, X, U)
            return np.asarray(gx, dtype=float), np.asarray(gu, dtype=float)
        gx = np.empty_like(X, dtype=float)
        gu = np.empty_like(U, dtype=float)
        for arr, out in ((X, gx), (U, gu)):
            for j in range(arr.shape[1]):
                h = 1e-6 * np.maximum(1.0, np.abs(arr[:, j]))
                up, dn = arr.copy(), arr.copy()
                up[:, j] += h
                dn[:, j] -= h
                if arr is X:
                    out[:, j] = (self.value(t, up, U) - self.value(t, dn, U)) / (2 * h)
                else:
                    out[:, j] = (self.value(t, X, up) - self.value(t, X, dn)) / (2 * h)
        return gx, gu


@dataclass(frozen=True)
class MayerTerm:
    """One additive Mayer contribution reading the state at step ``index``.

    ``value``/``gradient`` are the smooth surrogate used by the solvers;
    ``exact`` is the original (possibly discontinuous) term used for scoring.
    """

    index: int
    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    exact: Optional[Callable[[np.ndarray], float]] = None
    label: str = ""


@dataclass(frozen=True)
class StateBounds:
    """Path constraint ``lo <= x[index] <= hi`` imposed at every step."""

    index: int
    lo: float = -math.inf
    hi: float = math.inf

    @property
    def rows(self) -> list[tuple[float, float]]:
        # (sign, offset): constraint sign * x[index] - offset <= 0
        out = []
        if math.isfinite(self.lo):
            out.append((-1.0, -self.lo))
        if math.isfinite(self.hi):
            out.append((1.0, self.hi))
        return out


@dataclass(frozen=True)
class TerminalConstraints:
    """Constraints on the final state: ``ineq(x) <= 0`` and ``eq(x) = 0``.

    Jacobians map an ``n``-vector to ``(d, n)`` arrays.
    """

    ineq: Optional[Callable] = None
    ineq_jac: Optional[Callable] = None
    eq: Optional[Callable] = None
    eq_jac: Optional[Callable] = None

    def values(self, x) -> tuple[np.ndarray, np.ndarray]:
        c = np.zeros(0) if self.ineq is None else np.atleast_1d(np.asarray(self.ineq(x), dtype=float))
        e = np.zeros(0) if self.eq is None else np.atleast_1d(np.asarray(self.eq(x), dtype=float))
        return c, e

    def violation(self, x) -> float:
        c, e = self.values(x)
        return float(np.sum(np.maximum(c, 0.0) ** 2) + e @ e)

    @staticmethod
    def box(index: int, lo: float, hi: float, n: int) -> "TerminalConstraints":
        row = np.zeros(n)
        row[index] = 1.0
        return TerminalConstraints(
            ineq=lambda x: np.array([lo - x[index], x[index] - hi]),
            ineq_jac=lambda x: np.vstack([-row, row]),
        )

    @staticmethod
    def fix(index: int, value: float, n: int) -> "TerminalConstraints":
        row = np.zeros((1, n))
        row[0, index] = 1.0
        return TerminalConstraints(eq=lambda x: np.array([x[index] - value]), eq_jac=lambda x: row)


@dataclass(frozen=True, eq=False)
class OcpSpec:
    n: int
    m: int
    horizon: float
    steps: int
    x0: np.ndarray
    dynamics: Dynamics
    lagrange: object
    mayer: tuple[MayerTerm, ...] = ()
    path: tuple[StateBounds, ...] = ()
    control_lower: Optional[np.ndarray] = None
    control_upper: Optional[np.ndarray] = None
    terminal: TerminalConstraints = field(default_factory=TerminalConstraints)
    knot_lower: Optional[np.ndarray] = None
    knot_upper: Optional[np.ndarray] = None
    # optional rewrite of warm-start controls for segment solves (not used by full transcriptions)
    warm_controls: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = ""
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("need at least one step")
        x0 = np.asarray(self.x0, dtype=float).ravel()
        if x0.size != self.n or not np.all(np.isfinite(x0)):
            raise ValueError("initial state must be a finite n-vector")
        object.__setattr__(self, "x0", x0)
        for term in self.mayer:
            if not 1 <= term.index <= self.steps:
                raise ValueError(f"Mayer index {term.index} outside 1..{self.steps}")
        for attr, size in (("control_lower", self.m), ("control_upper", self.m),
                           ("knot_lower", self.n), ("knot_upper", self.n)):
            val = getattr(self, attr)
            if val is not None:
                object.__setattr__(self, attr, np.broadcast_to(np.asarray(val, dtype=float), (size,)).copy())

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def omega(self) -> tuple[int, ...]:
        return tuple(sorted({t.index for t in self.mayer}))

    def times(self, i: int = 0, j: Optional[int] = None) -> np.ndarray:
        j = self.steps if j is None else j
        return np.arange(i, j) * self.dt

    def mayer_value(self, X, exact: bool = False) -> float:
        """Mayer cost of a full trajectory ``X`` of shape ``(N + 1, n)``."""
        total = 0.0
        for term in self.mayer:
            fn = term.exact if exact else term.value
            if fn is None:
                raise ValueError(f"Mayer term {term.label or term.index} has no exact form")
            total += float(fn(X[term.index]))
        return total

    def lagrange_value(self, X, U, i: int = 0, j: Optional[int] = None) -> float:
        j = self.steps if j is None else j
        t = self.times(i, j)
        return float(self.dt * np.sum(self.lagrange.value(t, X[i:j], U[i:j])))

    def path_violation(self, X, U) -> float:
        v = 0.0
        for sb in self.path:
            col = X[: self.steps, sb.index]
            for sign, off in sb.rows:
                v += float(np.sum(np.maximum(sign * col - off, 0.0) ** 2))
        return v


# -- integration --------------------------------------------------------------


def rk4_step(spec: OcpSpec, k: int, x, u) -> np.ndarray:
    if not 0 <= k < spec.steps:
        raise ValueError(f"step index {k} outside 0..{spec.steps - 1}")
    x = np.asarray(x, dtype=float).reshape(1, spec.n)
    u = np.asarray(u, dtype=float).reshape(1, spec.m)
    out = kernels.rk4_batch(spec.dynamics, np.array([k * spec.dt]), x, u, spec.dt)[0][0]
    if not np.all(np.isfinite(out)):
        raise EvaluationError(f"non-finite state after step {k}", k)
    return out


@dataclass
class Trajectory:
    states: np.ndarray
    controls: np.ndarray
    truncated: bool = False


def rollout(spec: OcpSpec, U, x0=None) -> Trajectory:
    U = np.ascontiguousarray(np.asarray(U, dtype=float).reshape(spec.steps, spec.m))
    x0 = spec.x0 if x0 is None else np.asarray(x0, dtype=float)
    with np.errstate(all="ignore"):
        X = kernels.rk4_rollout(spec.dynamics, x0, U, 0.0, spec.dt)
    norms = np.max(np.abs(X), axis=1)
    bad = np.flatnonzero(~(norms <= DIVERGENCE_LIMIT))
    return Trajectory(X, U, truncated=bool(bad.size))


def uncontrolled_trajectory(spec: OcpSpec) -> Trajectory:
    """Roll-out with every control set to zero (the common initialization)."""
    return rollout(spec, np.zeros((spec.steps, spec.m)))


def trajectory_csv(spec: OcpSpec, X, U) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["t", *[f"x{i + 1}" for i in range(spec.n)], *[f"u{i + 1}" for i in range(spec.m)]])
    for k in range(spec.steps + 1):
        u = [repr(float(v)) for v in U[k]] if k < spec.steps else [""] * spec.m
        w.writerow([repr(k * spec.dt), *[repr(float(v)) for v in X[k]], *u])
    return buf.getvalue()


# -- transcription ------------------------------------------------------------


@dataclass(eq=False)
class DiscretizedOcp:
    """Flat NLP over the free states and controls of steps ``[i, j)``.

    Layout: free states ``x_{i+1}..x_{j-1}`` (and ``x_j`` when the end is free)
    row-major, followed by controls ``u_i..u_{j-1}`` row-major.
    """

    spec: OcpSpec
    i: int
    j: int
    x_start: np.ndarray
    x_end: Optional[np.ndarray]
    problem: NlpProblem = field(init=False)
    mayer_terms: tuple[MayerTerm, ...] = ()
    include_terminal: bool = False

    @property
    def free_end(self) -> bool:
        return self.x_end is None

    @property
    def n_free_states(self) -> int:
        return self.j - self.i - (0 if self.free_end else 1)

    @property
    def dimension(self) -> int:
        return self.spec.n * self.n_free_states + self.spec.m * (self.j - self.i)

    def state_index(self, k: int, comp: int) -> int:
        if not self.i < k <= self.i + self.n_free_states:
            raise IndexError(f"state {k} is not a variable of this transcription")
        return (k - self.i - 1) * self.spec.n + comp

    def control_index(self, k: int, comp: int) -> int:
        if not self.i <= k < self.j:
            raise IndexError(f"control {k} is not a variable of this transcription")
        return self.spec.n * self.n_free_states + (k - self.i) * self.spec.m + comp

    def unpack(self, v) -> tuple[np.ndarray, np.ndarray]:
        """Full segment states ``(j - i + 1, n)`` and controls ``(j - i, m)``."""
        n, m, L = self.spec.n, self.spec.m, self.j - self.i
        ns = self.n_free_states * n
        X = np.empty((L + 1, n))
        X[0] = self.x_start
        X[1:1 + self.n_free_states] = v[:ns].reshape(-1, n)
        if not self.free_end:
            X[L] = self.x_end
        return X, v[ns:].reshape(L, m)

    def pack(self, X, U) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return np.concatenate([X[1:1 + self.n_free_states].ravel(), np.asarray(U, dtype=float).ravel()])

    def warm_start(self, X_ref, U_ref) -> np.ndarray:
        """Pack a reference segment after blending its endpoints onto the knots."""
        X_ref = np.asarray(X_ref, dtype=float)
        L = self.j - self.i
        s = np.arange(L + 1)[:, None] / L
        X = X_ref + (1.0 - s) * (self.x_start - X_ref[0])
        if not self.free_end:
            X = X + s * (self.x_end - X_ref[L])
        U = np.array(U_ref, dtype=float)
        if self.spec.warm_controls is not None and not self.free_end:
            U = np.asarray(self.spec.warm_controls(U), dtype=float)
        if self.spec.control_lower is not None or self.spec.control_upper is not None:
            lo = -np.inf if self.spec.control_lower is None else self.spec.control_lower
            hi = np.inf if self.spec.control_upper is None else self.spec.control_upper
            U = np.clip(U, lo, hi)
        return self.pack(X, U)

    def __post_init__(self):
        spec = self.spec
        if not 0 <= self.i < self.j <= spec.steps:
            raise ValueError(f"need 0 <= i < j <= N, got i={self.i}, j={self.j}")
        self.x_start = np.asarray(self.x_start, dtype=float).ravel()
        if self.x_end is not None:
            self.x_end = np.asarray(self.x_end, dtype=float).ravel()
        for term in self.mayer_terms:
            if not self.i < term.index <= self.i + self.n_free_states:
                raise ValueError(f"Mayer term at {term.index} is not a free state of [{self.i}, {self.j}]")
        self.problem = self._build()

    def _build(self) -> NlpProblem:
        spec = self.spec
        n, m, L, dt = spec.n, spec.m, self.j - self.i, spec.dt
        t = spec.times(self.i, self.j)
        nfs = self.n_free_states
        ns = nfs * n
        dim = self.dimension
        dyn = spec.dynamics
        cache: dict = {}

        def steps(v, jac):
            key = v.tobytes()
            hit = cache.get("key") == key and (cache["jac"] or not jac)
            if not hit:
                X, U = self.unpack(v)
                with np.errstate(all="ignore"):
                    phi, Jx, Ju = kernels.rk4_batch(dyn, t, X[:-1], U, dt, jac)
                cache.update(key=key, jac=jac, X=X, U=U, phi=phi, Jx=Jx, Ju=Ju)
            return cache

        def scatter(gX, gU):
            out = np.empty(dim)
            out[:ns] = gX[1:1 + nfs].ravel()
            out[ns:] = gU.ravel()
            return out

        mayer_terms = self.mayer_terms
        offset = self.i

        def objective(v):
            X, U = self.unpack(v)
            val = dt * float(np.sum(spec.lagrange.value(t, X[:-1], U)))
            for term in mayer_terms:
                val += float(term.value(X[term.index - offset]))
            return val

        def objective_gradient(v):
            X, U = self.unpack(v)
            gx, gu = spec.lagrange.gradients(t, X[:-1], U)
            gX = np.zeros((L + 1, n))
            gX[:-1] = dt * gx
            gU = dt * np.array(gu, dtype=float)
            for term in mayer_terms:
                gX[term.index - offset] += term.gradient(X[term.index - offset])
            return scatter(gX, gU)

        def equalities(v):
            c = steps(v, False)
            parts = [(c["X"][1:] - c["phi"]).ravel()]
            if self.include_terminal and spec.terminal.eq is not None:
                parts.append(spec.terminal.values(c["X"][L])[1])
            return np.concatenate(parts)

        n_term_eq = 0
        n_term_ineq = 0
        if self.include_terminal:
            c_t, e_t = spec.terminal.values(spec.x0 if self.free_end else self.x_end)
            n_term_ineq, n_term_eq = c_t.size, e_t.size

        def equality_vjp(v, w):
            c = steps(v, True)
            W = w[: L * n].reshape(L, n)
            gX = np.zeros((L + 1, n))
            gX[1:] += W
            gX[:-1] -= np.einsum("kij,ki->kj", c["Jx"], W)
            gU = -np.einsum("kij,ki->kj", c["Ju"], W)
            if n_term_eq:
                gX[L] += w[L * n:] @ np.atleast_2d(spec.terminal.eq_jac(c["X"][L]))
            return scatter(gX, gU)

        rows = [(sb.index, sign, off) for sb in spec.path for sign, off in sb.rows]

        def inequalities(v):
            X, _ = self.unpack(v)
            parts = [sign * X[:-1, idx] - off for idx, sign, off in rows]
            if n_term_ineq:
                parts.append(spec.terminal.values(X[L])[0])
            return np.concatenate(parts) if parts else np.zeros(0)

        def inequality_vjp(v, w):
            X, _ = self.unpack(v)
            gX = np.zeros((L + 1, n))
            pos = 0
            for idx, sign, _off in rows:
                gX[:-1, idx] += sign * w[pos:pos + L]
                pos += L
            if n_term_ineq:
                gX[L] += w[pos:] @ np.atleast_2d(spec.terminal.ineq_jac(X[L]))
            return scatter(gX, np.zeros((L, m)))

        has_ineq = bool(rows) or n_term_ineq > 0
        lower = upper = None
        if spec.control_lower is not None or spec.control_upper is not None:
            lower = np.full(dim, -np.inf)
            upper = np.full(dim, np.inf)
            if spec.control_lower is not None:
                lower[ns:] = np.tile(spec.control_lower, L)
            if spec.control_upper is not None:
                upper[ns:] = np.tile(spec.control_upper, L)
        return NlpProblem(
            n=dim,
            objective=objective,
            objective_gradient=objective_gradient,
            inequalities=inequalities if has_ineq else None,
            equalities=equalities,
            inequality_vjp=inequality_vjp if has_ineq else None,
            equality_vjp=equality_vjp,
            lower=lower,
            upper=upper,
            name=f"{spec.name}[{self.i},{self.j}]",
        )


def transcribe_full(spec: OcpSpec) -> DiscretizedOcp:
    """The whole problem: states ``x_1..x_N`` and controls ``u_0..u_{N-1}`` free."""
    return DiscretizedOcp(spec, 0, spec.steps, spec.x0, None, mayer_terms=spec.mayer, include_terminal=True)


def segment_subproblem(spec: OcpSpec, i: int, x_i, j: int, x_j, mayer_terms: Sequence[MayerTerm] = ()) -> DiscretizedOcp:
    """Link ``x_i`` at step ``i`` to ``x_j`` at step ``j`` with minimal running cost.

    The final RK4 defect pins ``x_j``.  No terminal constraint; Mayer terms only
    when explicitly attached (they must read free states of the segment).
    """
    if j <= i:
        raise ValueError(f"segment end {j} must come after start {i}")
    return DiscretizedOcp(spec, i, j, x_i, x_j, mayer_terms=tuple(mayer_terms))


# -- knots and stitching ------------------------------------------------------


@dataclass(frozen=True)
class Lambda:
    """Knot indices ``0 < l_1 < ... < l_r = N`` exposed to the outer search."""

    indices: tuple[int, ...]
    steps: int
    omega: tuple[int, ...] = ()

    def __post_init__(self):
        idx = tuple(int(k) for k in self.indices)
        object.__setattr__(self, "indices", idx)
        if not idx:
            raise ValueError("knot set is empty")
        if list(idx) != sorted(set(idx)) or idx[0] < 1:
            raise ValueError(f"knot indices must be increasing and >= 1, got {idx}")
        if idx[-1] != self.steps:
            raise ValueError(f"the last knot must be N={self.steps}")
        missing = set(self.omega) - set(idx)
        if missing:
            raise ValueError(f"Mayer indices {sorted(missing)} are not knots")

    @property
    def r(self) -> int:
        return len(self.indices)

    @property
    def segments(self) -> list[tuple[int, int]]:
        bounds = (0, *self.indices)
        return list(zip(bounds[:-1], bounds[1:]))

    @classmethod
    def parse(cls, text: str, steps: int, omega: Sequence[int] = ()) -> "Lambda":
        """``"N"``, ``"N/2,N"`` or explicit integers such as ``"30,60"``."""
        out = []
        for tok in text.replace(" ", "").split(","):
            match = re.fullmatch(r"N(?:/(\d+))?", tok)
            if match:
                div = int(match.group(1) or 1)
                if steps % div:
                    raise ValueError(f"N={steps} is not divisible by {div}")
                out.append(steps // div)
            elif tok.isdigit():
                out.append(int(tok))
            else:
                raise ValueError(f"cannot parse knot {tok!r}")
        return cls(tuple(out), steps, tuple(omega))


@dataclass
class StitchResult:
    segments: list[BlackboxResult]
    objective: float
    total_lagrange: float
    mayer: float
    total_infeasibility: float
    terminal_violation: float
    states: np.ndarray
    controls: np.ndarray

    @property
    def status(self) -> Status:
        for seg in self.segments:
            if seg.solver_status is not Status.CONVERGED:
                return seg.solver_status
        return Status.CONVERGED


def split_mayer(spec: OcpSpec, lam_indices: Sequence[int], attach: bool):
    """Split Mayer terms into knot terms and per-segment attached terms."""
    knots = set(lam_indices)
    on_knots = [t for t in spec.mayer if t.index in knots]
    loose = [t for t in spec.mayer if t.index not in knots]
    if loose and not attach:
        raise ValueError(f"Mayer indices {[t.index for t in loose]} are not knots")
    return tuple(on_knots), tuple(loose)


def reformulation_blackbox(
    spec: OcpSpec,
    lam: Lambda,
    knots,
    warm_starts: Optional[Sequence[tuple[np.ndarray, np.ndarray]]] = None,
    settings: Optional[SolverSettings] = None,
    workers: int = 1,
    attach_mayer: bool = False,
) -> StitchResult:
    """Solve every knot-to-knot segment and combine the results.

    ``f`` is the Mayer cost on the knots plus the segment objectives, ``h`` the
    sum of segment infeasibilities plus the terminal violation at the last knot.
    ``warm_starts`` holds one ``(X, U)`` reference per segment; by default the
    uncontrolled roll-out is used.  With ``attach_mayer`` any Mayer term not on
    a knot is added to the objective of the segment that contains it.
    """
    settings = settings or SolverSettings()
    knots = np.asarray(knots, dtype=float).reshape(lam.r, spec.n)
    on_knots, loose = split_mayer(spec, lam.indices, attach_mayer)
    if warm_starts is None:
        ref = uncontrolled_trajectory(spec)
        warm_starts = [(ref.states[a:b + 1], ref.controls[a:b]) for a, b in lam.segments]
    starts = np.vstack([spec.x0, knots])

    def solve_one(s):
        a, b = lam.segments[s]
        terms = [t for t in loose if a < t.index < b]
        seg = segment_subproblem(spec, a, starts[s], b, starts[s + 1], terms)
        Xr, Ur = warm_starts[s]
        z0 = seg.warm_start(Xr, Ur)
        try:
            res = evaluate_blackbox(seg.problem, Partition(seg.dimension), np.zeros(0), z0, settings)
        except EvaluationError:
            # degrade to the warm start itself rather than abort the outer search
            with np.errstate(all="ignore"):
                h = _violation_unchecked(seg.problem, z0)
                f = float(seg.problem.objective(z0))
            if not (math.isfinite(h) and math.isfinite(f)):
                h, f = 1e300, 1e300
            res = BlackboxResult(h, f, z0, z0, Status.LINE_SEARCH_FAILURE)
        return seg, res

    if workers > 1 and lam.r > 1:
        with ThreadPoolExecutor(min(workers, lam.r)) as pool:
            solved = list(pool.map(solve_one, range(lam.r)))
    else:
        solved = [solve_one(s) for s in range(lam.r)]

    X = np.empty((spec.steps + 1, spec.n))
    U = np.empty((spec.steps, spec.m))
    X[0] = spec.x0
    seg_objective = 0.0
    mu = 0.0
    for (a, b), (seg, res) in zip(lam.segments, solved):
        Xs, Us = seg.unpack(res.smooth_minimizer)
        X[a + 1:b + 1] = Xs[1:]
        U[a:b] = Us
        seg_objective += res.objective
        mu += res.infeasibility
    mayer = sum(float(t.value(X[t.index])) for t in on_knots)
    term_v = spec.terminal.violation(X[spec.steps])
    total_lagrange = spec.lagrange_value(X, U)
    return StitchResult(
        segments=[r for _, r in solved],
        objective=mayer + seg_objective,
        total_lagrange=total_lagrange,
        mayer=mayer,
        total_infeasibility=mu + term_v,
        terminal_violation=term_v,
        states=X,
        controls=U,
    )
