"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

Every criterion returns ``(passed, detail, fingerprint)``.  The fingerprint
captures the raw outputs so the determinism criterion can rerun everything and
compare bit for bit.  Desk-scale budgets are set at the top of the module.
"""

import hashlib
import math
import time

import numpy as np
import pytest

from hybridoc import benchmarks, mads, methods
from hybridoc.benchmarks import counterexample, endpoint_infeasibility, infeasibility_scan
from hybridoc.methods import MethodConfig
from hybridoc.ocp import uncontrolled_trajectory
from hybridoc.problem import NlpProblem, Partition, evaluate_blackbox, grid_minimum, nested_grid_minimum, phase1
from hybridoc.scoring import WeightedNorm
from hybridoc.smooth import SolverSettings
from hybridoc.smoothing import FloorApprox, smooth_floor, smooth_floor_derivative

HO_BUDGET = 50
Z1_BUDGET = 60
Z2_BUDGET = 40
Z2_SEEDS = range(5)
SCAN_RESOLUTION = (20, 20)
RING_POINTS = 16

pytestmark = pytest.mark.slow


def _digest(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(np.asarray(a, dtype=float)).tobytes())
    return h.hexdigest()


# -- criteria -----------------------------------------------------------------


def lv_uncontrolled_endpoint():
    t0 = time.perf_counter()
    end = uncontrolled_trajectory(benchmarks.build("lv", T=60.0, N=600, X0=(2.25, 4.25), Xbar=(1.0, 1.0))).states[-1]
    elapsed = time.perf_counter() - t0
    err = float(np.max(np.abs(end - [0.05, 1.59])))
    ok = err <= 0.05 and elapsed < 1.0
    return ok, f"X_N = ({end[0]:.4f}, {end[1]:.4f}), inf-norm error {err:.3f}, {elapsed:.2f} s", _digest(end)


def floor_accuracy():
    t0 = time.perf_counter()
    fa = FloorApprox(75.0, -5, 5)
    xs = np.linspace(-5.0, 5.0, 10_000)
    xs = xs[np.abs(xs - np.round(xs)) >= 0.2]
    vals = smooth_floor(fa, xs)
    err = float(np.max(np.abs(vals - np.floor(xs))))
    rng = np.random.default_rng(2024)
    pts = rng.uniform(-4.9, 4.9, 100)
    h = 1e-7
    fd = (smooth_floor(fa, pts + h) - smooth_floor(fa, pts - h)) / (2 * h)
    d = smooth_floor_derivative(fa, pts)
    # relative to max(1, |d|): saturated terms below 1e-15 have no meaningful relative error
    rel = float(np.max(np.abs(fd - d) / np.maximum(1.0, np.abs(d))))
    elapsed = time.perf_counter() - t0
    ok = err <= 1e-6 and rel <= 1e-5 and elapsed < 1.0
    return ok, f"max floor error {err:.2e}, derivative error {rel:.2e}, {elapsed:.2f} s", _digest(vals, d)


def _random_problem(rng, n, p):
    A = rng.normal(size=(n, n))
    b = rng.normal(size=n)
    C = rng.normal(size=(2, n))
    d = rng.uniform(-0.5, 1.0, size=2)
    obj = lambda x: float(x @ A @ x + b @ x + np.sum(np.abs(x[:p])))  # noqa: E731
    cons = [lambda x, k=k: float(C[k] @ x - d[k]) for k in range(2)]
    return NlpProblem.from_functions(n, obj, inequality_constraints=cons)


def nested_infimum():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    mismatches, values = 0, []
    for _ in range(50):
        n = int(rng.integers(2, 5))
        p = int(rng.integers(1, 3))
        prob = _random_problem(rng, n, p)
        singular = tuple(sorted(rng.choice(n, size=p, replace=False).tolist()))
        axes = [np.linspace(-1.0, 1.0, 5) for _ in range(n)]
        full = grid_minimum(prob, axes)
        nested = nested_grid_minimum(prob, Partition(n, singular), axes)
        mismatches += full != nested
        values.append(full)
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and elapsed < 30.0
    return ok, f"{mismatches} of 50 grids disagree, {elapsed:.1f} s", _digest(values)


def two_phase_process():
    t0 = time.perf_counter()
    ce = counterexample("2.7")
    worst_mu = worst_obj = 0.0
    out = []
    for y in (0.0, 0.25, 0.5, 0.75):
        r = evaluate_blackbox(ce.problem, ce.partition, [y], warm_start=[0.0])
        worst_mu = max(worst_mu, abs(r.infeasibility - 2.0 * (1.0 - y) ** 2))
        worst_obj = max(worst_obj, abs(r.objective - y))
        out += [r.infeasibility, r.objective]
    r1 = evaluate_blackbox(ce.problem, ce.partition, [1.0], warm_start=[0.0])
    out += [r1.infeasibility, r1.objective]
    elapsed = time.perf_counter() - t0
    ok = (worst_mu <= 1e-4 and worst_obj <= 1e-4 and r1.infeasibility <= 1e-8
          and abs(r1.objective - 1.0) <= 1e-6 and elapsed < 5.0)
    detail = (f"mu error {worst_mu:.1e}, objective error {worst_obj:.1e}; at y = 1 mu {r1.infeasibility:.1e}, "
              f"objective {r1.objective:.8f}, {elapsed:.2f} s")
    return ok, detail, _digest(out)


def progressive_barrier():
    t0 = time.perf_counter()
    ce = counterexample("2.7")

    def blackbox(y):
        r = evaluate_blackbox(ce.problem, ce.partition, y, warm_start=[0.0])
        return r.objective, r.infeasibility

    res = mads.solve(blackbox, np.zeros(1), mads.MadsSettings(max_evaluations=500, seed=0))
    elapsed = time.perf_counter() - t0
    if res.best_feasible is None:
        return False, "no feasible incumbent", ""
    y = res.best_feasible[0]
    z = evaluate_blackbox(ce.problem, ce.partition, y, warm_start=[0.0]).smooth_minimizer
    stitched = np.array([y[0], z[0]])
    mono = all(b <= a for a, b in zip(res.h_max_trace, res.h_max_trace[1:]))
    err = float(np.max(np.abs(stitched - [1.0, 0.0])))
    ok = abs(y[0] - 1.0) <= 1e-2 and err <= 1e-2 and mono and elapsed < 10.0
    detail = (f"y = {y[0]:.5f}, stitched error {err:.1e}, h_max non-increasing {mono}, "
              f"{res.evaluations} evaluations, {elapsed:.1f} s")
    return ok, detail, _digest(stitched, [e.f for e in res.history], [e.h for e in res.history])


def _objective(label, y, budget):
    ce = counterexample(label)
    # gradient tolerance out of reach, so only the inner budget stops the solve
    s = SolverSettings(max_inner_iterations=budget, gradient_tolerance=1e-300)
    return evaluate_blackbox(ce.problem, ce.partition, [y], warm_start=[0.0], settings=s).objective


def counterexamples():
    t0 = time.perf_counter()
    notes, ok, out = [], True, []
    ce5 = counterexample("2.5")
    ys = np.round(np.linspace(-1.0, 2.0, 13), 12)
    grid = np.array([evaluate_blackbox(ce5.problem, ce5.partition, [y], warm_start=[0.0]).objective for y in ys])
    optima = sorted(ys[np.argsort(grid)[:2]].tolist())
    gap = float(np.min(grid[(ys != 0.0) & (ys != 1.0)]))
    ok &= optima == [0.0, 1.0] and gap > max(grid[ys == 0.0][0], grid[ys == 1.0][0])
    notes.append(f"2.5 optima {optima}")
    _, mu, _ = phase1(ce5.problem, ce5.partition, [1.0], [0.0])
    ok &= mu <= 1e-8
    out += grid.tolist() + [mu]
    for label, y in (("2.5", 1.0), ("2.6", 0.5), ("2.6", -2.0)):
        vals = [_objective(label, y, b) for b in (10, 100, 1000)]
        decreasing = vals[0] > vals[1] > vals[2] > 0.0
        ok &= decreasing
        notes.append(f"{label} at y = {y}: {'decreasing' if decreasing else 'NOT decreasing'}")
        out += vals
    ce7 = counterexample("2.7")
    _, mu_a, _ = phase1(ce7.problem, ce7.partition, [0.5], [0.0])
    _, mu_b, _ = phase1(ce7.problem, ce7.partition, [1.5], [0.0])
    ok &= mu_a > 0 and mu_b <= 1e-8
    out += [mu_a, mu_b]
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 30.0
    notes.append(f"2.7 mu(0.5) = {mu_a:.3g}, mu(1.5) = {mu_b:.1e}, {elapsed:.1f} s")
    return bool(ok), "; ".join(notes), _digest(out)


def oscillator_ranking():
    t0 = time.perf_counter()
    spec = benchmarks.build("ho", T=60.0, N=120)
    confs = [MethodConfig("so", budget=HO_BUDGET), MethodConfig("dfbbo", budget=HO_BUDGET),
             MethodConfig("hybrid", lam="N", budget=HO_BUDGET), MethodConfig("hybrid", lam="N/2,N", budget=HO_BUDGET)]
    recs = {c.label: methods.run(spec, c) for c in confs}
    elapsed = time.perf_counter() - t0
    baseline = min(recs["so"].true_objective, recs["dfbbo"].true_objective)
    ok = elapsed < 600.0
    for lab in ("hybrid[N]", "hybrid[N/2,N]"):
        ok &= recs[lab].true_objective < baseline and abs(recs[lab].states[-1, 0]) >= 1.0
    detail = ", ".join(f"{k} J = {r.true_objective:.3f} (x_N = {r.states[-1, 0]:.2f})" for k, r in recs.items())
    return bool(ok), f"{detail}, {elapsed:.0f} s", "|".join(r.fingerprint() for r in recs.values())


def zermelo_one():
    t0 = time.perf_counter()
    spec = benchmarks.build("z1", N=80)
    so = methods.run(spec, MethodConfig("so"))
    hy = methods.run(spec, MethodConfig("hybrid", lam="N", budget=Z1_BUDGET))
    elapsed = time.perf_counter() - t0
    viol = (hy.states[-1, 1] - spec.params["y_max"]) ** 2
    so_feasible = so.infeasibility <= 1e-6
    m_hy = spec.mayer_value(hy.states, exact=True)
    m_so = spec.mayer_value(so.states, exact=True)
    ok = viol <= 1e-6 and so_feasible and m_hy <= m_so and elapsed < 900.0
    detail = (f"hybrid terminal violation {viol:.1e}, floor Mayer {m_hy:g} vs SO {m_so:g} "
              f"(SO infeasibility {so.infeasibility:.1e}), {elapsed:.0f} s")
    return bool(ok), detail, so.fingerprint() + "|" + hy.fingerprint()


def zermelo_two():
    t0 = time.perf_counter()
    spec = benchmarks.build("z2", N=80)
    norm = WeightedNorm(tuple(spec.params["beta"]))
    B = np.array(spec.params["B"])
    mid = spec.steps // 2
    never_worse, strict, pairs, prints = True, 0, [], []
    for seed in Z2_SEEDS:
        one = methods.run(spec, MethodConfig("hybrid", lam="N", budget=Z2_BUDGET, seed=seed))
        two = methods.run(spec, MethodConfig("hybrid", lam="N/2,N", budget=Z2_BUDGET, seed=seed))
        a = math.floor(norm(one.states[mid] - B))
        b = math.floor(norm(two.states[mid] - B))
        never_worse &= b <= a
        strict += b < a
        pairs.append(f"{b}/{a}")
        prints += [one.fingerprint(), two.fingerprint()]
    elapsed = time.perf_counter() - t0
    ok = never_worse and strict >= 3 and elapsed < 1200.0
    detail = (f"midpoint floor N/2,N vs N per seed {' '.join(pairs)}; never worse {never_worse}, "
              f"strictly better in {strict} of {len(Z2_SEEDS)}, {elapsed:.0f} s")
    return bool(ok), detail, "|".join(prints)


def infeasibility_ring():
    t0 = time.perf_counter()
    spec = benchmarks.build("lv", N=120)
    end = uncontrolled_trajectory(spec).states[-1]
    center = np.array(spec.params["Xbar"])
    angles = 2 * np.pi * np.arange(RING_POINTS) / RING_POINTS
    ring = center + 0.5 * np.column_stack([np.cos(angles), np.sin(angles)])
    res = infeasibility_scan(spec, (0.0, 5.0), (0.0, 5.0), SCAN_RESOLUTION, extra_points=[end, *ring])
    mu_end = res.extra[0][1]
    mu_ring = max(m for _, m in res.extra[1:])
    elapsed = time.perf_counter() - t0
    ok = mu_end <= 1e-6 and mu_ring > 10.0 * mu_end and elapsed < 1200.0
    detail = (f"endpoint mu {mu_end:.1e}, ring max mu {mu_ring:.3g}, grid max {res.mu.max():.3g}, "
              f"{elapsed:.0f} s")
    return bool(ok), detail, _digest(res.mu, [m for _, m in res.extra])


CRITERIA = {
    1: ("LV uncontrolled endpoint", lv_uncontrolled_endpoint),
    2: ("floor smoothing accuracy", floor_accuracy),
    3: ("nested-infimum equivalence", nested_infimum),
    4: ("two-phase blackbox", two_phase_process),
    5: ("progressive barrier", progressive_barrier),
    6: ("counterexample suite", counterexamples),
    7: ("oscillator ranking", oscillator_ranking),
    8: ("Zermelo 1 parking", zermelo_one),
    9: ("Zermelo 2 midpoint", zermelo_two),
    10: ("LV infeasibility ring", infeasibility_ring),
}

_FIRST = {}


def _first_run(k):
    if k not in _FIRST:
        _FIRST[k] = CRITERIA[k][1]()
    return _FIRST[k]


def _report(lines, k, name, ok, detail):
    line = f"criterion {k}: {'PASS' if ok else 'FAIL'}  {name}: {detail}"
    lines.append(line)
    print(line)


@pytest.mark.parametrize("k", sorted(CRITERIA))
def test_criterion(k, acceptance_report):
    name = CRITERIA[k][0]
    ok, detail, _ = _first_run(k)
    _report(acceptance_report, k, name, ok, detail)
    assert ok, detail


def test_criterion_11_determinism(acceptance_report):
    differing = []
    for k in sorted(CRITERIA):
        _, _, first = _first_run(k)
        _, _, again = CRITERIA[k][1]()
        if first != again:
            differing.append(k)
    ok = not differing
    detail = "all reruns bit-identical" if ok else f"criteria {differing} differ on rerun"
    _report(acceptance_report, 11, "determinism", ok, detail)
    assert ok, detail
