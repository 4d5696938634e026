import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridoc.smoothing import FloorApprox, smooth_floor, smooth_floor_derivative, smooth_heaviside

FA = FloorApprox(75.0, -5, 5)


def test_heaviside_values(oracle):
    assert abs(smooth_heaviside(75.0, 0.0, 0.2) - oracle["heaviside_tau75_x0.2"]) <= 1e-15
    assert abs(smooth_heaviside(75.0, 0.0, 0.2) - 1.0) <= 1e-6
    assert smooth_heaviside(75.0, 0.0, -0.2) <= 1e-300
    for tau in (0.5, 3.0, 75.0):
        assert smooth_heaviside(tau, 1.7, 1.7) == pytest.approx(math.exp(-1.0), abs=1e-15)


def test_floor_examples(oracle):
    assert abs(smooth_floor(FA, 2.5) - 2.0) <= 1e-6
    assert smooth_floor(FA, 2.5) == pytest.approx(oracle["floor_2.5"], abs=1e-12)
    # integers do not map to integers
    assert smooth_floor(FA, 3.0) == pytest.approx(oracle["floor_3.0"], abs=1e-12)
    assert abs(smooth_floor(FA, -5.0) - (-5.0)) < 1e-12


def test_derivative_examples(oracle):
    assert abs(smooth_floor_derivative(FA, 1.5)) <= 1e-6
    assert smooth_floor_derivative(FA, 2.0) == pytest.approx(oracle["floor_deriv_knot"], rel=1e-12)


def test_pointwise_accuracy_away_from_integers():
    xs = np.linspace(-5, 5, 10_000)
    xs = xs[np.abs(xs - np.round(xs)) >= 0.2]
    err = max(abs(smooth_floor(FA, x) - math.floor(x)) for x in xs)
    assert err <= 1e-6


def test_derivative_matches_finite_differences():
    rng = np.random.default_rng(3)
    h = 1e-7
    for x in rng.uniform(-4.9, 4.9, 100):
        fd = (smooth_floor(FA, x + h) - smooth_floor(FA, x - h)) / (2 * h)
        d = smooth_floor_derivative(FA, x)
        assert abs(fd - d) <= 1e-5 * max(1.0, abs(d))


def test_clamped_outside_interval(caplog):
    assert smooth_floor(FA, 9.0) == smooth_floor(FA, 5.0)
    assert smooth_floor_derivative(FA, -9.0) == 0.0


@pytest.mark.parametrize("tau,a,b", [(0.0, 0, 1), (-1.0, 0, 1), (1.0, 2, 2), (1.0, 3, 1)])
def test_invalid_parameters(tau, a, b):
    with pytest.raises(ValueError):
        FloorApprox(tau, a, b)


@settings(max_examples=200, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5))
def test_monotone_and_in_range(x1, x2):
    lo, hi = sorted((x1, x2))
    f1, f2 = smooth_floor(FA, lo), smooth_floor(FA, hi)
    assert f1 <= f2
    assert -5 <= f1 <= -5 + 9 + 1e-12
