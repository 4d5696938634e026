"""Exact (unsmoothed) Mayer terms and trajectory scoring.

Nothing here may depend on the smoothed floor: these are the values results
are ranked by.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class WeightedNorm:
    """Euclidean norm of ``(a_1 X_1, ..., a_n X_n)``."""

    weights: tuple[float, ...]

    def __call__(self, X) -> float:
        return float(np.linalg.norm(np.asarray(self.weights) * np.asarray(X, dtype=float)))

    def gradient(self, X) -> np.ndarray:
        a = np.asarray(self.weights, dtype=float)
        X = np.asarray(X, dtype=float)
        r = float(np.linalg.norm(a * X))
        if r == 0.0:
            return np.zeros_like(X)
        return a * a * X / r


def oscillator_energy_term(mass: float, stiffness: float):
    """``(M/2) v^2 - (K/2) floor(x)^2``."""

    def term(x) -> float:
        return 0.5 * mass * float(x[1]) ** 2 - 0.5 * stiffness * math.floor(float(x[0])) ** 2

    return term


def scaled_floor_term(index: int, scale: float, sign: float = -1.0):
    """``sign * floor(x[index] / scale)``."""

    def term(x) -> float:
        return sign * math.floor(float(x[index]) / scale)

    return term


def distance_floor_term(target, weights):
    """``floor(||x - target||_weights)``."""
    norm = WeightedNorm(tuple(weights))
    target = np.asarray(target, dtype=float)

    def term(x) -> float:
        return float(math.floor(norm(np.asarray(x, dtype=float) - target)))

    return term


def true_objective(spec, X, U) -> float:
    """Exact Mayer cost plus left-rectangle running cost of a full trajectory."""
    return spec.mayer_value(X, exact=True) + spec.lagrange_value(X, U)


def smoothed_objective(spec, X, U) -> float:
    return spec.mayer_value(X, exact=False) + spec.lagrange_value(X, U)


def infeasibility(spec, X, U) -> float:
    """Path plus terminal violation along ``X`` (controls assumed inside their box)."""
    return spec.path_violation(X, U) + spec.terminal.violation(X[spec.steps])
