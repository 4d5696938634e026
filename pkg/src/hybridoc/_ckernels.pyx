# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: batched RK4 steps with Jacobians, roll-outs, L-BFGS.

Dynamics are selected by an integer model id (see ``hybridoc.dynamics``):

    0  spring-mass oscillator       params (M, K)
    1  river stream (Zermelo)       params (y_max, v_peak, w)
    2  Lotka-Volterra               params (x_bar, y_bar)
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin

cnp.import_array()

cdef enum:
    MAXN = 4


cdef inline int model_dims(int model, int* n, int* m) noexcept nogil:
    if model == 0:
        n[0] = 2; m[0] = 1
    elif model == 1:
        n[0] = 2; m[0] = 2
    elif model == 2:
        n[0] = 2; m[0] = 1
    else:
        return -1
    return 0


cdef inline void model_eval(int model, const double* p, double t, const double* x,
                            const double* u, double* f, double* A, double* B,
                            bint jac) noexcept nogil:
    # A is n x n row-major, B is n x m row-major
    cdef double y, ym, s1, s2, ds1, ds2, c, s
    if model == 0:
        f[0] = x[1]
        f[1] = (-p[1] * x[0] + u[0]) / p[0]
        if jac:
            A[0] = 0.0; A[1] = 1.0
            A[2] = -p[1] / p[0]; A[3] = 0.0
            B[0] = 0.0; B[1] = 1.0 / p[0]
    elif model == 1:
        y = x[1]
        ym = p[0]
        s1 = -p[1] * 4.0 * y * (ym - y) / (ym * ym)
        s2 = p[2] * (1.0 - 2.0 * y / ym)
        c = cos(u[1])
        s = sin(u[1])
        f[0] = s1 + u[0] * c
        f[1] = s2 + u[0] * s
        if jac:
            ds1 = -p[1] * 4.0 * (ym - 2.0 * y) / (ym * ym)
            ds2 = -2.0 * p[2] / ym
            A[0] = 0.0; A[1] = ds1
            A[2] = 0.0; A[3] = ds2
            B[0] = c; B[1] = -u[0] * s
            B[2] = s; B[3] = u[0] * c
    else:
        f[0] = x[0] * (x[1] - p[1] - u[0])
        f[1] = x[1] * (p[0] - x[0])
        if jac:
            A[0] = x[1] - p[1] - u[0]; A[1] = x[0]
            A[2] = -x[1]; A[3] = p[0] - x[0]
            B[0] = -x[0]; B[1] = 0.0


cdef void rk4_one(int model, const double* p, int n, int m, double t, double h,
                  const double* x, const double* u, double* phi,
                  double* Jx, double* Ju, bint jac) noexcept nogil:
    cdef double k1[MAXN], k2[MAXN], k3[MAXN], k4[MAXN], xs[MAXN]
    cdef double A[MAXN * MAXN], B[MAXN * MAXN]
    cdef double Dx[MAXN * MAXN], Du[MAXN * MAXN]
    cdef double Px[MAXN * MAXN], Pu[MAXN * MAXN]
    cdef double Sx[MAXN * MAXN], Su[MAXN * MAXN]
    cdef double half = 0.5 * h
    cdef double coef, w
    cdef int i, j, l, stage

    for stage in range(4):
        if stage == 0:
            for i in range(n):
                xs[i] = x[i]
            model_eval(model, p, t, xs, u, k1, A, B, jac)
        elif stage == 1:
            for i in range(n):
                xs[i] = x[i] + half * k1[i]
            model_eval(model, p, t + half, xs, u, k2, A, B, jac)
        elif stage == 2:
            for i in range(n):
                xs[i] = x[i] + half * k2[i]
            model_eval(model, p, t + half, xs, u, k3, A, B, jac)
        else:
            for i in range(n):
                xs[i] = x[i] + h * k3[i]
            model_eval(model, p, t + h, xs, u, k4, A, B, jac)
        if not jac:
            continue
        # stage derivative D = A (I + c * Dprev), Du = B + c * A Duprev
        if stage == 0:
            for i in range(n * n):
                Dx[i] = A[i]
            for i in range(n * m):
                Du[i] = B[i]
        else:
            coef = h if stage == 3 else half
            for i in range(n * n):
                Px[i] = Dx[i]
            for i in range(n * m):
                Pu[i] = Du[i]
            for i in range(n):
                for j in range(n):
                    w = A[i * n + j]
                    for l in range(n):
                        w += coef * A[i * n + l] * Px[l * n + j]
                    Dx[i * n + j] = w
                for j in range(m):
                    w = B[i * m + j]
                    for l in range(n):
                        w += coef * A[i * n + l] * Pu[l * m + j]
                    Du[i * m + j] = w
        w = 1.0 if (stage == 0 or stage == 3) else 2.0
        if stage == 0:
            for i in range(n * n):
                Sx[i] = w * Dx[i]
            for i in range(n * m):
                Su[i] = w * Du[i]
        else:
            for i in range(n * n):
                Sx[i] += w * Dx[i]
            for i in range(n * m):
                Su[i] += w * Du[i]

    for i in range(n):
        phi[i] = x[i] + (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    if jac:
        for i in range(n):
            for j in range(n):
                Jx[i * n + j] = (h / 6.0) * Sx[i * n + j] + (1.0 if i == j else 0.0)
            for j in range(m):
                Ju[i * m + j] = (h / 6.0) * Su[i * m + j]


def rk4_batch(int model, double[::1] params, double[::1] t, double[:, ::1] X,
              double[:, ::1] U, double h, bint jac=False):
    cdef int n, m, K = X.shape[0], k
    if model_dims(model, &n, &m) != 0:
        raise ValueError(f"unknown model id {model}")
    if X.shape[1] != n or U.shape[1] != m or U.shape[0] != K or t.shape[0] != K:
        raise ValueError("shape mismatch in rk4_batch")
    phi_arr = np.empty((K, n))
    cdef double[:, ::1] phi = phi_arr
    cdef double[:, :, ::1] Jx
    cdef double[:, :, ::1] Ju
    if jac:
        Jx_arr = np.empty((K, n, n))
        Ju_arr = np.empty((K, n, m))
        Jx = Jx_arr
        Ju = Ju_arr
        with nogil:
            for k in range(K):
                rk4_one(model, &params[0], n, m, t[k], h, &X[k, 0], &U[k, 0],
                        &phi[k, 0], &Jx[k, 0, 0], &Ju[k, 0, 0], True)
        return phi_arr, Jx_arr, Ju_arr
    cdef double dummy[MAXN * MAXN]
    with nogil:
        for k in range(K):
            rk4_one(model, &params[0], n, m, t[k], h, &X[k, 0], &U[k, 0],
                    &phi[k, 0], dummy, dummy, False)
    return phi_arr, None, None


def rk4_rollout(int model, double[::1] params, double[::1] x0, double[:, ::1] U,
                double t0, double h):
    cdef int n, m, K = U.shape[0], k, i
    if model_dims(model, &n, &m) != 0:
        raise ValueError(f"unknown model id {model}")
    if x0.shape[0] != n or U.shape[1] != m:
        raise ValueError("shape mismatch in rk4_rollout")
    out = np.empty((K + 1, n))
    cdef double[:, ::1] X = out
    cdef double dummy[MAXN * MAXN]
    with nogil:
        for i in range(n):
            X[0, i] = x0[i]
        for k in range(K):
            rk4_one(model, &params[0], n, m, t0 + k * h, h, &X[k, 0], &U[k, 0],
                    &X[k + 1, 0], dummy, dummy, False)
    return out


def lbfgs_direction(double[::1] g, double[:, ::1] S, double[:, ::1] Y,
                    double[::1] rho, int start, int count):
    cdef int n = g.shape[0], mem = S.shape[0], i, j, l
    out = np.array(g, copy=True)
    cdef double[::1] q = out
    cdef double[::1] alpha = np.empty(max(count, 1))
    cdef double acc, beta, sy, yy
    with nogil:
        for i in range(count - 1, -1, -1):
            j = (start + i) % mem
            acc = 0.0
            for l in range(n):
                acc += S[j, l] * q[l]
            alpha[i] = rho[j] * acc
            for l in range(n):
                q[l] -= alpha[i] * Y[j, l]
        if count > 0:
            j = (start + count - 1) % mem
            sy = 0.0
            yy = 0.0
            for l in range(n):
                sy += S[j, l] * Y[j, l]
                yy += Y[j, l] * Y[j, l]
            for l in range(n):
                q[l] *= sy / yy
        for i in range(count):
            j = (start + i) % mem
            acc = 0.0
            for l in range(n):
                acc += Y[j, l] * q[l]
            beta = rho[j] * acc
            for l in range(n):
                q[l] += (alpha[i] - beta) * S[j, l]
    return out
