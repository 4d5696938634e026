"""Vectorized dynamics ``f(t, x, u)`` with state/control Jacobians.

All ``rhs``/``jac`` methods act on batches: ``t`` has shape ``(K,)``, ``X``
``(K, n)`` and ``U`` ``(K, m)``.  The built-in models carry a ``model_id`` so
the compiled kernels can evaluate them without calling back into Python.
"""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np


class Dynamics:
    n: int
    m: int
    model_id: Optional[int] = None
    model_params: Optional[np.ndarray] = None

    def rhs(self, t, X, U) -> np.ndarray:
        raise NotImplementedError

    def jac(self, t, X, U) -> tuple[np.ndarray, np.ndarray]:
        """Batched ``(df/dx, df/du)`` of shapes ``(K, n, n)`` and ``(K, n, m)``."""
        return _fd_jacobians(self.rhs, t, X, U)

    def __call__(self, t, x, u) -> np.ndarray:
        return self.rhs(np.atleast_1d(float(t)), np.atleast_2d(x), np.atleast_2d(u))[0]


def _fd_jacobians(rhs, t, X, U, step=1e-6):
    K, n = X.shape
    m = U.shape[1]
    A = np.empty((K, n, n))
    B = np.empty((K, n, m))
    for j in range(n):
        hj = step * np.maximum(1.0, np.abs(X[:, j]))
        Xp = X.copy()
        Xm = X.copy()
        Xp[:, j] += hj
        Xm[:, j] -= hj
        A[:, :, j] = (rhs(t, Xp, U) - rhs(t, Xm, U)) / (2.0 * hj)[:, None]
    for j in range(m):
        hj = step * np.maximum(1.0, np.abs(U[:, j]))
        Up = U.copy()
        Um = U.copy()
        Up[:, j] += hj
        Um[:, j] -= hj
        B[:, :, j] = (rhs(t, X, Up) - rhs(t, X, Um)) / (2.0 * hj)[:, None]
    return A, B


class FunctionDynamics(Dynamics):
    """Dynamics from a pointwise ``f(t, x, u) -> n-vector``; Jacobians by finite differences."""

    def __init__(self, n: int, m: int, f: Callable, jacobian: Optional[Callable] = None):
        self.n, self.m = n, m
        self._f = f
        self._jac = jacobian

    def rhs(self, t, X, U):
        return np.array([np.asarray(self._f(tk, xk, uk), dtype=float) for tk, xk, uk in zip(t, X, U)])

    def jac(self, t, X, U):
        if self._jac is None:
            return _fd_jacobians(self.rhs, t, X, U)
        pairs = [self._jac(tk, xk, uk) for tk, xk, uk in zip(t, X, U)]
        return np.array([p[0] for p in pairs], dtype=float), np.array([p[1] for p in pairs], dtype=float)


class Oscillator(Dynamics):
    """Spring-mass system: ``x' = v``, ``v' = (-K x + u) / M``."""

    n, m = 2, 1
    model_id = 0

    def __init__(self, mass: float, stiffness: float):
        self.mass, self.stiffness = float(mass), float(stiffness)
        self.model_params = np.array([self.mass, self.stiffness])

    def rhs(self, t, X, U):
        out = np.empty_like(X, dtype=float)
        out[:, 0] = X[:, 1]
        out[:, 1] = (-self.stiffness * X[:, 0] + U[:, 0]) / self.mass
        return out

    def jac(self, t, X, U):
        K = X.shape[0]
        A = np.zeros((K, 2, 2))
        A[:, 0, 1] = 1.0
        A[:, 1, 0] = -self.stiffness / self.mass
        B = np.zeros((K, 2, 1))
        B[:, 1, 0] = 1.0 / self.mass
        return A, B


class StreamBoat(Dynamics):
    """Boat with speed ``u`` and heading ``theta`` in a river current.

    Current: ``s1(y) = -v_peak * 4 y (y_max - y) / y_max**2`` along the river and
    ``s2(y) = w (1 - 2 y / y_max)`` across it.
    """

    n, m = 2, 2
    model_id = 1

    def __init__(self, y_max: float, v_peak: float, w: float):
        self.y_max, self.v_peak, self.w = float(y_max), float(v_peak), float(w)
        self.model_params = np.array([self.y_max, self.v_peak, self.w])

    def current(self, Y):
        ym = self.y_max
        return -self.v_peak * 4.0 * Y * (ym - Y) / ym**2, self.w * (1.0 - 2.0 * Y / ym)

    def rhs(self, t, X, U):
        s1, s2 = self.current(X[:, 1])
        out = np.empty((X.shape[0], 2))
        out[:, 0] = s1 + U[:, 0] * np.cos(U[:, 1])
        out[:, 1] = s2 + U[:, 0] * np.sin(U[:, 1])
        return out

    def jac(self, t, X, U):
        ym = self.y_max
        K = X.shape[0]
        c, s = np.cos(U[:, 1]), np.sin(U[:, 1])
        A = np.zeros((K, 2, 2))
        A[:, 0, 1] = -self.v_peak * 4.0 * (ym - 2.0 * X[:, 1]) / ym**2
        A[:, 1, 1] = -2.0 * self.w / ym
        B = np.empty((K, 2, 2))
        B[:, 0, 0] = c
        B[:, 0, 1] = -U[:, 0] * s
        B[:, 1, 0] = s
        B[:, 1, 1] = U[:, 0] * c
        return A, B


class LotkaVolterra(Dynamics):
    """Predator-prey with prey harvesting: ``x' = x (y - y_bar - u)``, ``y' = y (x_bar - x)``."""

    n, m = 2, 1
    model_id = 2

    def __init__(self, x_bar: float, y_bar: float):
        self.x_bar, self.y_bar = float(x_bar), float(y_bar)
        self.model_params = np.array([self.x_bar, self.y_bar])

    def rhs(self, t, X, U):
        out = np.empty((X.shape[0], 2))
        out[:, 0] = X[:, 0] * (X[:, 1] - self.y_bar - U[:, 0])
        out[:, 1] = X[:, 1] * (self.x_bar - X[:, 0])
        return out

    def jac(self, t, X, U):
        K = X.shape[0]
        A = np.empty((K, 2, 2))
        A[:, 0, 0] = X[:, 1] - self.y_bar - U[:, 0]
        A[:, 0, 1] = X[:, 0]
        A[:, 1, 0] = -X[:, 1]
        A[:, 1, 1] = self.x_bar - X[:, 0]
        B = np.zeros((K, 2, 1))
        B[:, 0, 0] = -X[:, 0]
        return A, B
