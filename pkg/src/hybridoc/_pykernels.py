"""Pure numpy implementations of the hot kernels.

These are the fallback when the compiled ``_ckernels`` extension is missing, and
the only path for user-supplied dynamics that have no compiled model id.
"""

from __future__ import annotations

import numpy as np


def rk4_batch(dyn, t, X, U, h, jac=False):
    """One RK4 step for every row of ``X``/``U`` (controls held over the step).

    Returns ``(Phi, Jx, Ju)`` with shapes ``(K, n)``, ``(K, n, n)``, ``(K, n, m)``;
    the Jacobians are ``None`` unless ``jac`` is set.
    """
    t = np.asarray(t, dtype=float)
    half = 0.5 * h
    k1 = dyn.rhs(t, X, U)
    x2 = X + half * k1
    k2 = dyn.rhs(t + half, x2, U)
    x3 = X + half * k2
    k3 = dyn.rhs(t + half, x3, U)
    x4 = X + h * k3
    k4 = dyn.rhs(t + h, x4, U)
    phi = X + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not jac:
        return phi, None, None

    n = X.shape[1]
    eye = np.eye(n)
    A1, B1 = dyn.jac(t, X, U)
    A2, B2 = dyn.jac(t + half, x2, U)
    A3, B3 = dyn.jac(t + half, x3, U)
    A4, B4 = dyn.jac(t + h, x4, U)
    D1x, D1u = A1, B1
    D2x = A2 @ (eye + half * D1x)
    D2u = B2 + half * (A2 @ D1u)
    D3x = A3 @ (eye + half * D2x)
    D3u = B3 + half * (A3 @ D2u)
    D4x = A4 @ (eye + h * D3x)
    D4u = B4 + h * (A4 @ D3u)
    Jx = eye + (h / 6.0) * (D1x + 2.0 * D2x + 2.0 * D3x + D4x)
    Ju = (h / 6.0) * (D1u + 2.0 * D2u + 2.0 * D3u + D4u)
    return phi, Jx, Ju


def rk4_rollout(dyn, x0, U, t0, h):
    K = U.shape[0]
    X = np.empty((K + 1, x0.shape[0]))
    X[0] = x0
    for k in range(K):
        X[k + 1] = rk4_batch(dyn, np.array([t0 + k * h]), X[k:k + 1], U[k:k + 1], h)[0][0]
    return X


def lbfgs_direction(g, S, Y, rho, start, count):
    """Two-loop recursion: approximate inverse Hessian applied to ``g``.

    ``S``/``Y`` are ring buffers of shape ``(memory, n)``; the newest pair sits at
    ``(start + count - 1) % memory``.
    """
    q = g.copy()
    mem = S.shape[0]
    alpha = np.empty(count)
    for i in range(count - 1, -1, -1):
        j = (start + i) % mem
        alpha[i] = rho[j] * (S[j] @ q)
        q -= alpha[i] * Y[j]
    if count:
        j = (start + count - 1) % mem
        q *= (S[j] @ Y[j]) / (Y[j] @ Y[j])
    for i in range(count):
        j = (start + i) % mem
        beta = rho[j] * (Y[j] @ q)
        q += (alpha[i] - beta) * S[j]
    return q
