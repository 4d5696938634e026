import numpy as np
import pytest

from hybridoc import benchmarks as B
from hybridoc import kernels
from hybridoc.dynamics import FunctionDynamics
from hybridoc.kernels import use_backend

needs_compiled = pytest.mark.skipif(not kernels.compiled_available(), reason="extension not built")


@needs_compiled
@pytest.mark.parametrize("name", ["ho", "z1", "lv"])
def test_backends_agree(name):
    spec = B.build(name, N=50)
    rng = np.random.default_rng(0)
    X = rng.uniform(0.2, 3, (40, spec.n))
    U = rng.uniform(0, 0.3, (40, spec.m))
    t = rng.uniform(0, 10, 40)
    with use_backend("cython"):
        a = kernels.rk4_batch(spec.dynamics, t, X, U, 0.1, True)
        ra = kernels.rk4_rollout(spec.dynamics, spec.x0, U, 0.0, 0.1)
    with use_backend("python"):
        b = kernels.rk4_batch(spec.dynamics, t, X, U, 0.1, True)
        rb = kernels.rk4_rollout(spec.dynamics, spec.x0, U, 0.0, 0.1)
    for p, q in zip(a, b):
        np.testing.assert_allclose(p, q, rtol=1e-13, atol=1e-14)
    np.testing.assert_allclose(ra, rb, rtol=1e-12, atol=1e-13)


@pytest.mark.parametrize("backend", ["python", pytest.param("cython", marks=needs_compiled)])
def test_step_jacobian_matches_finite_differences(backend):
    spec = B.build("z1", N=10)
    rng = np.random.default_rng(1)
    x = rng.uniform(0.5, 5.5, (1, 2))
    u = rng.uniform(0.1, 0.9, (1, 2))
    t = np.array([0.3])
    with use_backend(backend):
        _, Jx, Ju = kernels.rk4_batch(spec.dynamics, t, x, u, 0.5, True)
        for j in range(2):
            e = np.zeros((1, 2))
            e[0, j] = 1e-6
            fx = (kernels.rk4_batch(spec.dynamics, t, x + e, u, 0.5)[0] - kernels.rk4_batch(spec.dynamics, t, x - e, u, 0.5)[0]) / 2e-6
            fu = (kernels.rk4_batch(spec.dynamics, t, x, u + e, 0.5)[0] - kernels.rk4_batch(spec.dynamics, t, x, u - e, 0.5)[0]) / 2e-6
            np.testing.assert_allclose(Jx[0, :, j], fx[0], atol=1e-7)
            np.testing.assert_allclose(Ju[0, :, j], fu[0], atol=1e-7)


@pytest.mark.parametrize("backend", ["python", pytest.param("cython", marks=needs_compiled)])
def test_lbfgs_direction_backends(backend):
    rng = np.random.default_rng(2)
    n, mem = 7, 4
    S = rng.standard_normal((mem, n))
    Y = S * rng.uniform(1, 3, n)
    rho = 1.0 / np.einsum("ij,ij->i", S, Y)
    g = rng.standard_normal(n)
    with use_backend(backend):
        d = kernels.lbfgs_direction(g, S, Y, rho, 1, 3)
    from hybridoc._pykernels import lbfgs_direction

    np.testing.assert_allclose(d, lbfgs_direction(g, S, Y, rho, 1, 3), rtol=1e-12)


def test_function_dynamics_uses_python_path():
    dyn = FunctionDynamics(1, 1, lambda t, x, u: x)
    phi, Jx, Ju = kernels.rk4_batch(dyn, np.zeros(1), np.ones((1, 1)), np.zeros((1, 1)), 0.1, True)
    assert phi[0, 0] == pytest.approx(1.10517083333, abs=1e-10)
    assert Jx[0, 0, 0] == pytest.approx(1.10517083333, abs=1e-7)
    assert Ju[0, 0, 0] == pytest.approx(0.0, abs=1e-12)


def test_unknown_backend():
    with pytest.raises(ValueError):
        with use_backend("fortran"):
            pass
