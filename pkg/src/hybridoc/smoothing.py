"""Smooth (C-infinity) approximation of the floor function.

The step ``1[q, +inf)(x)`` is replaced by ``exp(-exp(-tau * (x - q)))`` and the
floor on ``[a, b]`` by ``a + sum_{q=a+1}^{b-1}`` of those steps.  Terms whose
exponent is beyond +/-40 are saturated, which keeps the cost of one evaluation
independent of ``b - a``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_TAU = 75.0
_SATURATION = 40.0


def smooth_heaviside(tau: float, q: float, x):
    """Smoothed indicator of ``[q, +inf)``; equals ``exp(-1)`` at ``x == q``."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    x = np.asarray(x, dtype=float)
    with np.errstate(over="ignore", under="ignore"):
        out = np.exp(-np.exp(-tau * (x - q)))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class FloorApprox:
    """Smoothed floor on the integer interval ``[a, b]``."""

    tau: float = DEFAULT_TAU
    a: int = -5
    b: int = 5

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if int(self.a) != self.a or int(self.b) != self.b:
            raise ValueError("interval bounds must be integers")
        if not self.a < self.b:
            raise ValueError(f"need a < b, got [{self.a}, {self.b}]")

    def _window(self, x: float) -> tuple[int, int, int]:
        """Return (count of saturated-to-one terms, first and last live q)."""
        width = _SATURATION / self.tau
        q_first = self.a + 1
        q_last = self.b - 1
        # q <= x - width -> term is 1 to machine precision
        lo = max(q_first, math.ceil(x - width))
        hi = min(q_last, math.floor(x + width))
        n_one = max(0, min(lo, q_last + 1) - q_first)
        return n_one, lo, hi

    def _clamp(self, x: float) -> float:
        if x < self.a or x > self.b:
            logger.debug("smooth_floor argument %g clamped to [%d, %d]", x, self.a, self.b)
            return min(max(x, self.a), self.b)
        return x

    def __call__(self, x):
        if np.ndim(x):
            return np.array([self(v) for v in np.asarray(x, dtype=float).ravel()]).reshape(np.shape(x))
        x = self._clamp(float(x))
        n_one, lo, hi = self._window(x)
        total = float(self.a + n_one)
        if lo <= hi:
            qs = np.arange(lo, hi + 1, dtype=float)
            total += float(np.sum(np.exp(-np.exp(-self.tau * (x - qs)))))
        return total

    def derivative(self, x):
        """Analytic derivative; zero outside ``[a, b]`` where the value is clamped."""
        if np.ndim(x):
            return np.array([self.derivative(v) for v in np.asarray(x, dtype=float).ravel()]).reshape(np.shape(x))
        x = float(x)
        if x < self.a or x > self.b:
            return 0.0
        _, lo, hi = self._window(x)
        if lo > hi:
            return 0.0
        qs = np.arange(lo, hi + 1, dtype=float)
        e = np.exp(-self.tau * (x - qs))
        return float(np.sum(self.tau * e * np.exp(-e)))


def smooth_floor(fa: FloorApprox, x):
    return fa(x)


def smooth_floor_derivative(fa: FloorApprox, x):
    return fa.derivative(x)
