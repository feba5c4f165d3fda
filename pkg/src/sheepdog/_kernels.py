"""Compiled inner loops: drift, explicit Euler paths and the discrete adjoint sweep.

``coef`` is ``ModelParams.coefficients()``:
``[c_r1, c_a1, l_r1, l_a1, c_r2, c_a2, l_r2, l_a2, alpha]``.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True, inline="always")
def _dphi(r, c_r, c_a, l_r, l_a):
    return -(c_r / l_r) * math.exp(-r / l_r) + (c_a / l_a) * math.exp(-r / l_a)


@njit(cache=True, inline="always")
def _d2phi(r, c_r, c_a, l_r, l_a):
    return (c_r / (l_r * l_r)) * math.exp(-r / l_r) - (c_a / (l_a * l_a)) * math.exp(-r / l_a)


@njit(cache=True)
def drift(x, v, a, coef, eps, out):
    n, d = x.shape
    m = a.shape[0]
    alpha = coef[8]
    inv_n = 1.0 / n
    for i in range(n):
        for c in range(d):
            out[i, c] = 0.0
    # sheep-sheep, each unordered pair once: G(-z) = -G(z)
    for i in range(n):
        for k in range(i + 1, n):
            r2 = 0.0
            for c in range(d):
                dz = x[i, c] - x[k, c]
                r2 += dz * dz
            r = math.sqrt(r2)
            if r <= eps:
                continue
            g = _dphi(r, coef[0], coef[1], coef[2], coef[3]) / r
            for c in range(d):
                f = g * (x[i, c] - x[k, c])
                out[i, c] += f
                out[k, c] -= f
    for i in range(n):
        for c in range(d):
            out[i, c] *= inv_n
        for j in range(m):
            r2 = 0.0
            for c in range(d):
                dz = x[i, c] - a[j, c]
                r2 += dz * dz
            r = math.sqrt(r2)
            if r <= eps:
                continue
            g = _dphi(r, coef[4], coef[5], coef[6], coef[7]) / r
            for c in range(d):
                out[i, c] += g * (x[i, c] - a[j, c])
        for c in range(d):
            out[i, c] = -(out[i, c] + alpha * v[i, c])


@njit(cache=True)
def euler_step(x, v, a, u_cell, dt, coef, eps, sigma, noise, use_noise, xo, vo, ao, buf):
    drift(x, v, a, coef, eps, buf)
    n, d = x.shape
    for i in range(n):
        for c in range(d):
            xo[i, c] = x[i, c] + dt * v[i, c]
            vo[i, c] = v[i, c] + dt * buf[i, c]
            if use_noise:
                vo[i, c] += sigma * noise[i, c]
    for j in range(a.shape[0]):
        for c in range(d):
            ao[j, c] = a[j, c] + dt * u_cell[j, c]


@njit(cache=True)
def euler_path(x0, v0, a0, u, dt, coef, eps, sigma, noise, use_noise, X, V, A):
    """Fill ``X, V, A`` (shape ``(n_steps+1, ., D)``) by explicit Euler(-Maruyama)."""
    X[0] = x0
    V[0] = v0
    A[0] = a0
    buf = np.empty_like(x0)
    for s in range(u.shape[0]):
        euler_step(X[s], V[s], A[s], u[s], dt, coef, eps, sigma, noise[s], use_noise,
                   X[s + 1], V[s + 1], A[s + 1], buf)


@njit(cache=True)
def adjoint_rhs(x, a, xi2, coef, eps, wx, wa):
    """``wx = (dW/dx)^T xi2`` per sheep and ``wa = (dW/da)^T xi2`` per dog.

    Sheep j receives ``(1/N) sum_k H1(x_j - x_k)(xi_j - xi_k) + sum_m H2(x_j - a_m) xi_j``,
    dog m receives ``-sum_i H2(x_i - a_m) xi_i``.
    """
    n, d = x.shape
    m = a.shape[0]
    inv_n = 1.0 / n
    zh = np.empty(d)
    w = np.empty(d)
    for i in range(n):
        for c in range(d):
            wx[i, c] = 0.0
    for j in range(m):
        for c in range(d):
            wa[j, c] = 0.0
    # H1 is even in z, so the pair (i, k) contributes h to i and -h to k
    for i in range(n):
        for k in range(i + 1, n):
            r2 = 0.0
            for c in range(d):
                zh[c] = x[i, c] - x[k, c]
                r2 += zh[c] * zh[c]
            r = math.sqrt(r2)
            if r <= eps:
                continue
            d1 = _dphi(r, coef[0], coef[1], coef[2], coef[3])
            d2 = _d2phi(r, coef[0], coef[1], coef[2], coef[3])
            p = 0.0
            for c in range(d):
                zh[c] /= r
                w[c] = xi2[i, c] - xi2[k, c]
                p += zh[c] * w[c]
            q = d1 / r
            for c in range(d):
                h = d2 * p * zh[c] + q * (w[c] - p * zh[c])
                wx[i, c] += h
                wx[k, c] -= h
    for i in range(n):
        for c in range(d):
            wx[i, c] *= inv_n
        for j in range(m):
            r2 = 0.0
            for c in range(d):
                zh[c] = x[i, c] - a[j, c]
                r2 += zh[c] * zh[c]
            r = math.sqrt(r2)
            if r <= eps:
                continue
            d1 = _dphi(r, coef[4], coef[5], coef[6], coef[7])
            d2 = _d2phi(r, coef[4], coef[5], coef[6], coef[7])
            p = 0.0
            for c in range(d):
                zh[c] /= r
                p += zh[c] * xi2[i, c]
            q = d1 / r
            for c in range(d):
                h = d2 * p * zh[c] + q * (xi2[i, c] - p * zh[c])
                wx[i, c] += h
                wa[j, c] -= h


@njit(cache=True)
def adjoint_sweep(X, A, src, dt, coef, eps, XI1, XI2, XI3):
    """Backward sweep ``xi_n = xi_{n+1} - dt * rhs(y_n, xi_{n+1})`` from zero terminal data.

    This is exactly the discrete adjoint of the explicit Euler forward map
    with left-rectangle cost quadrature.
    """
    ns = X.shape[0] - 1
    alpha = coef[8]
    XI1[ns] = 0.0
    XI2[ns] = 0.0
    XI3[ns] = 0.0
    wx = np.empty_like(X[0])
    wa = np.empty_like(A[0])
    for s in range(ns - 1, -1, -1):
        adjoint_rhs(X[s], A[s], XI2[s + 1], coef, eps, wx, wa)
        XI1[s] = XI1[s + 1] - dt * (src[s] + wx)
        XI2[s] = XI2[s + 1] - dt * (alpha * XI2[s + 1] - XI1[s + 1])
        XI3[s] = XI3[s + 1] - dt * wa
