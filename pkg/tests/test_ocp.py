import csv
import io
import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from hybridoc import benchmarks
from hybridoc.dynamics import FunctionDynamics, Oscillator
from hybridoc.ocp import (
    ControlCost,
    Lambda,
    MayerTerm,
    OcpSpec,
    StateBounds,
    TerminalConstraints,
    reformulation_blackbox,
    rk4_step,
    rollout,
    segment_subproblem,
    split_mayer,
    trajectory_csv,
    transcribe_full,
    uncontrolled_trajectory,
)
from hybridoc.problem import EvaluationError, Partition, evaluate_blackbox, violation
from hybridoc.smooth import SolverSettings


def scalar_spec(f, steps=10, horizon=1.0, x0=1.0, **kw):
    return OcpSpec(n=1, m=1, horizon=horizon, steps=steps, x0=np.array([x0]),
                   dynamics=FunctionDynamics(1, 1, f), lagrange=ControlCost((1.0,)), **kw)


# -- RK4 -------------------------------------------------------------------------


def test_rk4_constant_dynamics():
    spec = scalar_spec(lambda t, x, u: np.zeros(1))
    assert rk4_step(spec, 0, np.array([3.5]), np.zeros(1))[0] == 3.5


def test_rk4_exponential_polynomial(oracle):
    spec = scalar_spec(lambda t, x, u: x, steps=10)
    got = rk4_step(spec, 0, np.array([1.0]), np.zeros(1))[0]
    assert got == pytest.approx(oracle["rk4_exp_step"], rel=1e-15)
    assert abs(got - math.exp(0.1)) <= 1e-7


def test_rk4_oscillator_step_matches_reference(oracle):
    spec = benchmarks.build("ho", N=600)
    got = rk4_step(spec, 0, np.array([1.0, 0.0]), np.zeros(1))
    assert np.max(np.abs(got - oracle["ho_step_reference"])) <= 1e-8


def test_rk4_step_index_checked():
    spec = scalar_spec(lambda t, x, u: x)
    with pytest.raises((IndexError, ValueError)):
        rk4_step(spec, spec.steps, np.ones(1), np.zeros(1))


def test_rk4_non_finite_raises():
    spec = scalar_spec(lambda t, x, u: x**3, horizon=100.0)
    with pytest.raises(EvaluationError), np.errstate(over="ignore"):
        rk4_step(spec, 0, np.array([1e200]), np.zeros(1))


def test_time_dependent_dynamics_use_step_time():
    # x' = t has exact RK4 steps since the integrand is linear in t
    spec = scalar_spec(lambda t, x, u: np.array([t]), steps=4, horizon=2.0, x0=0.0)
    X = uncontrolled_trajectory(spec).states
    assert np.allclose(X[:, 0], 0.5 * np.linspace(0.0, 2.0, 5) ** 2, atol=1e-14)


# -- roll-outs --------------------------------------------------------------------


def test_zero_dynamics_rollout_constant():
    spec = scalar_spec(lambda t, x, u: np.zeros(1))
    X = uncontrolled_trajectory(spec).states
    assert np.all(X == 1.0)


def test_lotka_volterra_endpoint_oracle(oracle):
    X = uncontrolled_trajectory(benchmarks.build("lv")).states
    assert np.allclose(X[-1], oracle["lv_rk4_endpoint"], rtol=1e-12, atol=0)
    assert np.allclose(X[-2], oracle["lv_rk4_step_599"], rtol=1e-12, atol=0)
    assert np.max(np.abs(X[-1] - oracle["lv_reference_t60"])) <= 1e-2


def test_oscillator_rollout_matches_reference_integrator():
    spec = benchmarks.build("ho", N=600)
    X = uncontrolled_trajectory(spec).states
    dyn = Oscillator(2.0, 0.5)
    ref = solve_ivp(lambda t, x: dyn(t, x, np.zeros(1)), (0.0, 60.0), [1.0, 0.0], method="DOP853",
                    rtol=1e-12, atol=1e-12, t_eval=np.linspace(0, 60, 601))
    # RK4 phase error grows like t * w * (w h)^4 / 120 = 1.56e-6 at t = 60
    assert np.max(np.abs(X - ref.y.T)) <= 2e-6


def test_oscillator_energy_conserved():
    spec = benchmarks.build("ho", N=600)
    X = uncontrolled_trajectory(spec).states
    energy = 0.5 * 2.0 * X[:, 1] ** 2 + 0.5 * 0.5 * X[:, 0] ** 2
    assert np.max(np.abs(energy / energy[0] - 1.0)) <= 1e-6
    t = np.arange(601) * 0.1
    assert np.max(np.abs(X[:, 0] - np.cos(0.5 * t))) <= 2e-6


def test_rollout_flags_divergence():
    spec = benchmarks.build("lv", N=40)
    assert uncontrolled_trajectory(spec).truncated


# -- transcription ------------------------------------------------------------------


def test_toy_dimensions():
    spec = scalar_spec(lambda t, x, u: u, steps=2)
    full = transcribe_full(spec)
    assert full.dimension == 4
    v = full.pack(np.array([[1.0], [2.0], [3.0]]), np.array([[5.0], [6.0]]))
    assert full.problem.eq(v).size == 2


def test_zermelo_full_dimension():
    assert transcribe_full(benchmarks.build("z1", N=400)).dimension == 1600


@pytest.mark.parametrize("name", ["ho", "z1", "z2", "lv"])
def test_uncontrolled_trajectory_has_zero_defects(name):
    spec = benchmarks.build(name, N=120)
    tr = uncontrolled_trajectory(spec)
    full = transcribe_full(spec)
    v = full.pack(tr.states, tr.controls)
    assert np.max(np.abs(full.problem.eq(v)[: spec.n * spec.steps])) <= 1e-12


def test_pack_unpack_roundtrip():
    spec = benchmarks.build("z2", N=20)
    rng = np.random.default_rng(0)
    X = rng.normal(size=(21, 2))
    X[0] = spec.x0
    U = rng.normal(size=(20, 2))
    full = transcribe_full(spec)
    X2, U2 = full.unpack(full.pack(X, U))
    assert np.array_equal(X2, X) and np.array_equal(U2, U)


def test_control_box_in_flat_problem():
    full = transcribe_full(benchmarks.build("z1", N=10))
    lo = full.problem.lower[full.control_index(0, 0):]
    hi = full.problem.upper[full.control_index(0, 0):]
    assert np.all(lo[0::2] == 0.0) and np.all(hi[0::2] == 1.0)
    assert np.all(np.isinf(lo[1::2])) and np.all(np.isinf(hi[1::2]))


def _fd_check(prob, v, rng):
    g = prob.grad(v)
    for _ in range(5):
        d = rng.normal(size=v.size)
        eps = 1e-6
        fd = (prob.objective(v + eps * d) - prob.objective(v - eps * d)) / (2 * eps)
        assert g @ d == pytest.approx(fd, rel=1e-5, abs=1e-7)
    for vals, vjp in ((prob.eq, prob.eq_vjp), (prob.ineq, prob.ineq_vjp)):
        w = rng.normal(size=vals(v).size)
        if not w.size:
            continue
        d = rng.normal(size=v.size)
        fd = (w @ vals(v + 1e-6 * d) - w @ vals(v - 1e-6 * d)) / 2e-6
        assert vjp(v, w) @ d == pytest.approx(fd, rel=1e-5, abs=1e-7)


@pytest.mark.parametrize("name", ["ho", "z1", "z2", "lv"])
def test_full_transcription_derivatives(name):
    # the predator-prey roll-out needs a fine grid to stay bounded
    spec = benchmarks.build(name, N=120 if name == "lv" else 12)
    full = transcribe_full(spec)
    rng = np.random.default_rng(1)
    tr = uncontrolled_trajectory(spec)
    v = full.pack(tr.states, tr.controls) + 0.05 * rng.normal(size=full.dimension)
    v = full.problem.project(v)
    _fd_check(full.problem, v, rng)


def test_left_rectangle_lagrange():
    spec = benchmarks.build("ho", N=10)
    U = np.linspace(0.0, 0.9, 10)[:, None]
    X = rollout(spec, U).states
    assert spec.lagrange_value(X, U) == pytest.approx(spec.dt * U.sum() / spec.horizon, rel=1e-15)


def test_path_constraint_rows():
    spec = benchmarks.build("z1", N=4)
    X = np.array([[0.0, 0.0], [0.0, -1.0], [0.0, 7.0], [0.0, 3.0], [0.0, 100.0]])
    # the final state is covered by the terminal constraint, not the path rows
    assert spec.path_violation(X, np.zeros((4, 2))) == pytest.approx(1.0 + 1.0)


def test_terminal_constructors():
    box = TerminalConstraints.box(1, 0.0, 6.0, 2)
    assert box.violation(np.array([0.0, 7.0])) == pytest.approx(1.0)
    assert box.violation(np.array([0.0, 3.0])) == 0.0
    fix = TerminalConstraints.fix(1, 6.0, 2)
    assert fix.violation(np.array([5.0, 4.0])) == pytest.approx(4.0)


# -- segments -------------------------------------------------------------------------


def test_single_step_segment():
    spec = benchmarks.build("ho", N=10)
    x_i = np.array([1.0, 0.0])
    target = rk4_step(spec, 3, x_i, np.array([0.4]))
    seg = segment_subproblem(spec, 3, x_i, 4, target)
    assert seg.dimension == spec.m
    res = evaluate_blackbox(seg.problem, Partition(seg.dimension), np.zeros(0), np.array([0.1]))
    assert res.infeasibility <= 1e-12
    assert res.smooth_minimizer[0] == pytest.approx(0.4, abs=1e-6)


@pytest.mark.parametrize("i,j", [(0, 10), (3, 7), (9, 10)])
def test_segment_variable_count(i, j):
    spec = benchmarks.build("z2", N=10)
    seg = segment_subproblem(spec, i, np.zeros(2), j, np.ones(2))
    assert seg.dimension == spec.n * (j - i - 1) + spec.m * (j - i)


def test_segment_rejects_empty_range():
    spec = benchmarks.build("ho", N=10)
    with pytest.raises(ValueError):
        segment_subproblem(spec, 4, np.zeros(2), 4, np.zeros(2))


def test_oscillator_segment_to_uncontrolled_endpoint():
    spec = benchmarks.build("ho", N=60)
    tr = uncontrolled_trajectory(spec)
    seg = segment_subproblem(spec, 0, spec.x0, 60, tr.states[-1])
    z0 = seg.warm_start(tr.states, tr.controls)
    assert violation(seg.problem, z0) <= 1e-20
    res = evaluate_blackbox(seg.problem, Partition(seg.dimension), np.zeros(0), z0)
    assert res.infeasibility <= 1e-12
    assert res.objective == pytest.approx(0.0, abs=1e-8)


@pytest.mark.parametrize("name", ["z1", "lv"])
def test_segment_derivatives(name):
    spec = benchmarks.build(name, N=120)
    tr = uncontrolled_trajectory(spec)
    seg = segment_subproblem(spec, 20, tr.states[20], 90, tr.states[90] + 0.3)
    rng = np.random.default_rng(3)
    z0 = seg.warm_start(tr.states[20:91], tr.controls[20:90])
    v = seg.problem.project(z0 + 0.05 * rng.normal(size=seg.dimension))
    _fd_check(seg.problem, v, rng)


# -- knots ----------------------------------------------------------------------------


def test_lambda_parse_presets():
    assert Lambda.parse("N", 80).indices == (80,)
    assert Lambda.parse("N/2,N", 80).indices == (40, 80)
    assert Lambda.parse("30, 60", 60).segments == [(0, 30), (30, 60)]


@pytest.mark.parametrize("text", ["40", "N,N/2", "0,N", "N/3,N", "x"])
def test_lambda_parse_rejects(text):
    with pytest.raises(ValueError):
        Lambda.parse(text, 80)


def test_lambda_requires_mayer_indices_as_knots():
    with pytest.raises(ValueError):
        Lambda((80,), 80, omega=(40, 80))


def test_split_mayer():
    spec = benchmarks.build("z2", N=20)
    on, loose = split_mayer(spec, (20,), attach=True)
    assert [t.index for t in on] == [20] and [t.index for t in loose] == [10]
    with pytest.raises(ValueError):
        split_mayer(spec, (20,), attach=False)


def test_reformulation_at_uncontrolled_knots_is_free():
    spec = benchmarks.build("ho", N=40)
    tr = uncontrolled_trajectory(spec)
    lam = Lambda.parse("N/2,N", 40, spec.omega)
    res = reformulation_blackbox(spec, lam, tr.states[[20, 40]])
    assert res.total_infeasibility <= 1e-12
    assert res.total_lagrange == pytest.approx(0.0, abs=1e-8)
    assert np.allclose(res.states, tr.states, atol=1e-6)


def test_single_knot_matches_direct_two_phase_solve():
    spec = benchmarks.build("lv", N=60)
    tr = uncontrolled_trajectory(spec)
    knot = np.array([0.6, 0.9])
    lam = Lambda.parse("N", 60, spec.omega)
    res = reformulation_blackbox(spec, lam, knot)
    seg = segment_subproblem(spec, 0, spec.x0, 60, knot)
    direct = evaluate_blackbox(seg.problem, Partition(seg.dimension), np.zeros(0),
                               seg.warm_start(tr.states, tr.controls))
    assert res.total_infeasibility == pytest.approx(direct.infeasibility, rel=1e-12, abs=1e-15)
    assert res.objective == pytest.approx(direct.objective + spec.mayer[0].value(knot), rel=1e-12)


def test_zermelo_two_knots_carry_their_mayer_terms():
    spec = benchmarks.build("z2", N=20)
    tr = uncontrolled_trajectory(spec)
    lam = Lambda.parse("N/2,N", 20, spec.omega)
    knots = tr.states[[10, 20]]
    res = reformulation_blackbox(spec, lam, knots)
    mid, final = spec.mayer
    assert res.mayer == pytest.approx(mid.value(knots[0]) + final.value(knots[1]), rel=1e-14)


def test_reformulation_is_order_independent():
    spec = benchmarks.build("z2", N=20)
    tr = uncontrolled_trajectory(spec)
    lam = Lambda.parse("N/2,N", 20, spec.omega)
    knots = tr.states[[10, 20]] + np.array([[-3.0, 1.0], [-5.0, 0.5]])
    settings = SolverSettings(max_outer_iterations=5, max_inner_iterations=100)
    a = reformulation_blackbox(spec, lam, knots, settings=settings)
    b = reformulation_blackbox(spec, lam, knots, settings=settings, workers=2)
    assert (a.objective, a.total_infeasibility) == (b.objective, b.total_infeasibility)
    assert np.array_equal(a.states, b.states)


def test_attached_mayer_enters_segment_objective():
    spec = benchmarks.build("z2", N=20)
    tr = uncontrolled_trajectory(spec)
    lam = Lambda.parse("N", 20, (20,))
    res = reformulation_blackbox(spec, lam, tr.states[20], attach_mayer=True)
    mid = spec.mayer[0]
    # at the uncontrolled knot the segment stays near u = 0, so its objective is about the B term
    assert res.objective - res.mayer == pytest.approx(mid.value(res.states[10]) + res.total_lagrange, abs=1e-6)


# -- output ------------------------------------------------------------------------------


def test_trajectory_csv():
    spec = benchmarks.build("lv", N=60)
    tr = uncontrolled_trajectory(spec)
    rows = list(csv.reader(io.StringIO(trajectory_csv(spec, tr.states, tr.controls))))
    assert rows[0] == ["t", "x1", "x2", "u1"]
    assert len(rows) == 62
    assert float(rows[-1][1]) == tr.states[-1, 0]
    assert rows[-1][3] == ""


def test_spec_validation():
    with pytest.raises(ValueError):
        scalar_spec(lambda t, x, u: x, steps=0)
    with pytest.raises(ValueError):
        scalar_spec(lambda t, x, u: x, mayer=(MayerTerm(11, lambda x: 0.0, lambda x: 0.0 * x),))
    with pytest.raises(ValueError):
        scalar_spec(lambda t, x, u: x, x0=math.nan)


def test_state_bounds_rows():
    rows = StateBounds(1, 0.0, 6.0).rows
    col = np.array([-1.0, 3.0, 7.0])
    v = sum(np.maximum(sign * col - off, 0.0) ** 2 for sign, off in rows)
    assert v.tolist() == [1.0, 0.0, 1.0]
