"""Pure-numpy implementations of the hot per-iteration kernels.

These are the fallback for :mod:`arml._kernels_cy`; both backends expose the
same functions with identical semantics (results agree to rounding).
"""

import numpy as np

# A vector already on the simplex is returned as-is (copied), which makes the
# projection exactly idempotent. Tolerance matches the simplex invariant.
_FEAS_ATOL = 1e-9


def project_simplex(v, total):
    """Euclidean projection of ``v`` onto ``{x >= 0, sum(x) = total}``.

    Sort-based thresholding: O(n log n), exact up to rounding.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.min(initial=np.inf) >= 0.0 and abs(v.sum() - total) <= _FEAS_ATOL * max(1.0, abs(total)):
        return v.copy()
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - total
    idx = np.arange(1, v.size + 1)
    rho = np.nonzero(u * idx > css)[0][-1]
    tau = css[rho] / (rho + 1.0)
    return np.maximum(v - tau, 0.0)


def weight_residual(g_main, g_aux, alpha):
    """r = g_main - sum_k alpha_k * g_aux[k]; g_aux is stacked (K, d)."""
    return g_main - alpha @ g_aux


def weight_objective(g_main, g_aux, alpha):
    r = weight_residual(g_main, g_aux, alpha)
    return float(r @ r)


def weight_gradient(g_main, g_aux, alpha):
    """d/d alpha of the squared score-matching residual: -2 * g_aux @ r."""
    r = weight_residual(g_main, g_aux, alpha)
    return -2.0 * (g_aux @ r)


def weight_step(alpha, g_main, g_aux, lr, total):
    """One projected gradient step on the matching objective."""
    return project_simplex(alpha - lr * weight_gradient(g_main, g_aux, alpha), total)


def gaussian_score(precision, x, center):
    """Score of N(center, precision^-1) at x: -precision @ (x - center)."""
    return -(precision @ (x - center))


def step_update(theta, grad, eps, noise=None):
    """theta + eps * grad (+ noise). The ascent step of the sampler/optimizer."""
    out = theta + eps * grad
    if noise is not None:
        out += noise
    return out
