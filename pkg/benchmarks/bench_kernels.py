"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Covers one RK4 roll-out, a batch of RK4 steps with Jacobians (the cost of one
transcription derivative), one L-BFGS two-loop recursion, and an end-to-end
direct-transcription solve.  Prints the best time per backend and the speedup.
"""

import argparse
import timeit

import numpy as np

from hybridoc import benchmarks, kernels
from hybridoc.kernels import use_backend
from hybridoc.methods import MethodConfig, run


def cases():
    rng = np.random.default_rng(0)
    lv = benchmarks.build("lv")
    z1 = benchmarks.build("z1")
    N = lv.steps
    U = np.zeros((N, 1))
    X = rng.uniform(0.5, 3.0, (z1.steps, 2))
    Uz = rng.uniform(0.0, 1.0, (z1.steps, 2))
    t = np.arange(z1.steps) * z1.dt
    mem, n = 10, 2000
    S = rng.normal(size=(mem, n))
    Y = S + 0.1 * rng.normal(size=(mem, n))
    rho = 1.0 / np.einsum("ij,ij->i", S, Y)
    g = rng.normal(size=n)
    ho = benchmarks.build("ho", N=120)
    return [
        ("rk4 roll-out, LV N=600", lambda: kernels.rk4_rollout(lv.dynamics, lv.x0, U, 0.0, lv.dt), 200),
        ("rk4 steps + Jacobians, Z1 N=400", lambda: kernels.rk4_batch(z1.dynamics, t, X, Uz, z1.dt, True), 100),
        ("L-BFGS direction, n=2000 m=10", lambda: kernels.lbfgs_direction(g, S, Y, rho, 0, mem), 500),
        ("direct transcription solve, HO N=120", lambda: run(ho, MethodConfig("so")), 1),
    ]


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if not kernels.compiled_available():
        print("compiled kernels not built; only the fallback can be timed")
    names = ["python"] + (["cython"] if kernels.compiled_available() else [])
    print(f"{'case':<40}" + "".join(f"{n + ' [ms]':>16}" for n in names) + f"{'speedup':>10}")
    for label, fn, number in cases():
        best = {}
        for name in names:
            with use_backend(name):
                best[name] = min(timeit.repeat(fn, number=number, repeat=args.repeat)) / number * 1e3
        speed = f"{best['python'] / best['cython']:>9.1f}x" if "cython" in best else ""
        print(f"{label:<40}" + "".join(f"{best[n]:>16.3f}" for n in names) + speed)


if __name__ == "__main__":
    main()
