# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot per-iteration kernels.

Mirrors :mod:`arml._kernels_py`. The vectors involved are small (weight
dimension K <= dozens, parameter dimension up to a few thousand), so the win
over numpy comes from removing per-call dispatch overhead and temporaries.
"""

import numpy as np

from libc.math cimport fabs, INFINITY

_FEAS_ATOL = 1e-9


def project_simplex(v, double total):
    cdef double[::1] vv = np.ascontiguousarray(v, dtype=np.float64)
    cdef Py_ssize_t n = vv.shape[0]
    cdef Py_ssize_t i, j
    cdef double s = 0.0, mn = INFINITY
    for i in range(n):
        s += vv[i]
        if vv[i] < mn:
            mn = vv[i]
    cdef double tol = _FEAS_ATOL * (1.0 if fabs(total) < 1.0 else fabs(total))
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    if mn >= 0.0 and fabs(s - total) <= tol:
        for i in range(n):
            o[i] = vv[i]
        return out
    # descending insertion sort into a scratch copy (n is small by design)
    scratch = np.empty(n, dtype=np.float64)
    cdef double[::1] u = scratch
    cdef double key
    for i in range(n):
        u[i] = vv[i]
    for i in range(1, n):
        key = u[i]
        j = i - 1
        while j >= 0 and u[j] < key:
            u[j + 1] = u[j]
            j -= 1
        u[j + 1] = key
    cdef double css = 0.0, tau = 0.0
    for i in range(n):
        css += u[i]
        if u[i] * (i + 1) > css - total:
            tau = (css - total) / (i + 1)
    for i in range(n):
        o[i] = vv[i] - tau if vv[i] > tau else 0.0
    return out


def weight_residual(g_main, g_aux, alpha):
    cdef double[::1] gm = np.ascontiguousarray(g_main, dtype=np.float64)
    cdef double[:, ::1] ga = np.ascontiguousarray(g_aux, dtype=np.float64)
    cdef double[::1] a = np.ascontiguousarray(alpha, dtype=np.float64)
    cdef Py_ssize_t k = ga.shape[0], d = ga.shape[1]
    cdef Py_ssize_t i, j
    out = np.empty(d, dtype=np.float64)
    cdef double[::1] r = out
    cdef double acc
    for j in range(d):
        acc = gm[j]
        for i in range(k):
            acc -= a[i] * ga[i, j]
        r[j] = acc
    return out


def weight_objective(g_main, g_aux, alpha):
    cdef double[::1] r = weight_residual(g_main, g_aux, alpha)
    cdef double acc = 0.0
    cdef Py_ssize_t j
    for j in range(r.shape[0]):
        acc += r[j] * r[j]
    return acc


def weight_gradient(g_main, g_aux, alpha):
    cdef double[::1] r = weight_residual(g_main, g_aux, alpha)
    cdef double[:, ::1] ga = np.ascontiguousarray(g_aux, dtype=np.float64)
    cdef Py_ssize_t k = ga.shape[0], d = ga.shape[1]
    cdef Py_ssize_t i, j
    out = np.empty(k, dtype=np.float64)
    cdef double[::1] g = out
    cdef double acc
    for i in range(k):
        acc = 0.0
        for j in range(d):
            acc += ga[i, j] * r[j]
        g[i] = -2.0 * acc
    return out

def weight_step(alpha, g_main, g_aux, double lr, double total):
    cdef double[::1] grad = weight_gradient(g_main, g_aux, alpha)
    cdef double[::1] a = np.ascontiguousarray(alpha, dtype=np.float64)
    cdef Py_ssize_t k = a.shape[0]
    cdef Py_ssize_t i
    stepped = np.empty(k, dtype=np.float64)
    cdef double[::1] s = stepped
    for i in range(k):
        s[i] = a[i] - lr * grad[i]
    return project_simplex(stepped, total)


def gaussian_score(precision, x, center):
    cdef double[:, ::1] p = np.ascontiguousarray(precision, dtype=np.float64)
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[::1] c = np.ascontiguousarray(center, dtype=np.float64)
    cdef Py_ssize_t d = p.shape[0]
    cdef Py_ssize_t i, j
    diff = np.empty(d, dtype=np.float64)
    cdef double[::1] dv = diff
    for i in range(d):
        dv[i] = xv[i] - c[i]
    out = np.empty(d, dtype=np.float64)
    cdef double[::1] o = out
    cdef double acc
    for i in range(d):
        acc = 0.0
        for j in range(d):
            acc += p[i, j] * dv[j]
        o[i] = -acc
    return out


def step_update(theta, grad, double eps, noise=None):
    cdef double[::1] t = np.ascontiguousarray(theta, dtype=np.float64)
    cdef double[::1] g = np.ascontiguousarray(grad, dtype=np.float64)
    cdef Py_ssize_t d = t.shape[0]
    cdef Py_ssize_t i
    out = np.empty(d, dtype=np.float64)
    cdef double[::1] o = out
    cdef double[::1] nv
    if noise is None:
        for i in range(d):
            o[i] = t[i] + eps * g[i]
    else:
        nv = np.ascontiguousarray(noise, dtype=np.float64)
        for i in range(d):
            o[i] = t[i] + eps * g[i] + nv[i]
    return out
