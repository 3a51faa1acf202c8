"""Closed-form Gaussian machinery: weighted-product priors, KL and Fisher
divergences, and a brute-force lattice minimizer used as ground truth for
the learned task weights.

For parameter-space Gaussian tasks sharing one covariance Sigma, the
weighted product of likelihoods normalizes to another Gaussian,

    N(sum_k alpha_k center_k / K,  Sigma / K)   with sum_k alpha_k = K,

so the optimal weights have an exact, enumerable characterization. The
partition function of the weighted product is never computed anywhere: the
weight update works on score functions, and the closed form above comes out
of completing the square.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from arml.reweight import check_simplex
from arml.tasks import GaussianTaskSpec, as_covariance

MAX_BRUTE_FORCE_TASKS = 4


@dataclass(frozen=True)
class GaussianDist:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = as_covariance(self.cov, mean.shape[0])
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def precision(self) -> np.ndarray:
        prec = np.linalg.inv(self.cov)
        return 0.5 * (prec + prec.T)

    def score(self, x) -> np.ndarray:
        return -(self.precision() @ (np.asarray(x) - self.mean))


class GaussianFamily:
    """K parameter-space Gaussian tasks sharing one covariance, plus the
    designated true prior p_star the weights should reconstruct."""

    def __init__(self, specs, p_star: GaussianDist):
        specs = list(specs)
        if not specs:
            raise ValueError("family needs at least one task spec")
        cov = specs[0].covariance
        for spec in specs[1:]:
            if not np.allclose(spec.covariance, cov, atol=1e-12):
                raise ValueError("all task specs must share one covariance")
        if p_star.dim != specs[0].dim:
            raise ValueError("p_star dimension must match the task specs")
        self.specs = specs
        self.p_star = p_star

    @property
    def num_tasks(self) -> int:
        return len(self.specs)

    @property
    def dim(self) -> int:
        return self.specs[0].dim

    @property
    def covariance(self) -> np.ndarray:
        return self.specs[0].covariance

    @property
    def centers(self) -> np.ndarray:
        return np.stack([s.center for s in self.specs])


def surrogate_prior(family: GaussianFamily, alpha) -> GaussianDist:
    """The Gaussian induced by the alpha-weighted product of task likelihoods."""
    alpha = check_simplex(alpha, total=family.num_tasks)
    if alpha.size != family.num_tasks:
        raise ValueError("alpha length must equal the number of tasks")
    k = family.num_tasks
    mean = (alpha @ family.centers) / k
    return GaussianDist(mean, family.covariance / k)


def kl_gaussian(p: GaussianDist, q: GaussianDist) -> float:
    """KL(p || q) between multivariate Gaussians, closed form."""
    if p.dim != q.dim:
        raise ValueError("dimension mismatch")
    d = p.dim
    diff = q.mean - p.mean
    solve_cov = np.linalg.solve(q.cov, p.cov)
    maha = diff @ np.linalg.solve(q.cov, diff)
    _, logdet_p = np.linalg.slogdet(p.cov)
    _, logdet_q = np.linalg.slogdet(q.cov)
    return float(0.5 * (np.trace(solve_cov) + maha - d + logdet_q - logdet_p))


def fisher_divergence_gaussian(p: GaussianDist, q: GaussianDist) -> float:
    """E_{x~p} || grad log p(x) - grad log q(x) ||^2, closed form.

    The score difference is affine, A (x - mu_p) + b with A = P_q - P_p and
    b = P_q (mu_p - mu_q), so the expectation reduces to Gaussian moments:
    tr(A Sigma_p A) + ||b||^2. With equal covariances this is
    ||Sigma^-1 (mu_p - mu_q)||^2.
    """
    if p.dim != q.dim:
        raise ValueError("dimension mismatch")
    a = q.precision() - p.precision()
    b = q.precision() @ (p.mean - q.mean)
    return float(np.trace(a @ p.cov @ a) + b @ b)


def gaussian_entropy(p: GaussianDist) -> float:
    """Differential entropy of p (documentation extra; nothing asserts on it)."""
    _, logdet = np.linalg.slogdet(p.cov)
    return float(0.5 * (p.dim * (1.0 + math.log(2.0 * math.pi)) + logdet))


def simplex_lattice(num_tasks: int, grid_res: float):
    """Yield lattice weights {alpha_k = m_k * grid_res * K, sum alpha = K}
    in ascending lexicographic order.

    ``grid_res`` is the step as a fraction of the total mass K; 1/grid_res
    must be (close to) an integer.
    """
    if not 0 < grid_res <= 1:
        raise ValueError("grid_res must lie in (0, 1]")
    steps = round(1.0 / grid_res)
    if abs(steps * grid_res - 1.0) > 1e-9:
        raise ValueError("1/grid_res must be an integer number of lattice steps")
    unit = num_tasks / steps
    for cuts in itertools.combinations_with_replacement(range(steps + 1),
                                                        num_tasks - 1):
        counts = np.diff((0,) + cuts + (steps,))
        yield counts * unit


def brute_force_optimal_weights(family: GaussianFamily, grid_res: float):
    """Exhaustive lattice minimizer of KL(p_star || surrogate_prior(alpha)).

    Returns (alpha, kl). Ties go to the lexicographically smallest alpha,
    which is the first one visited. K is capped to keep the lattice small.
    """
    k = family.num_tasks
    if k > MAX_BRUTE_FORCE_TASKS:
        raise ValueError(
            f"brute force supports at most {MAX_BRUTE_FORCE_TASKS} tasks, got {k}")
    # Covariance terms are constant on the lattice; only the mean term varies.
    q_cov = family.covariance / k
    base = GaussianDist(family.p_star.mean, family.p_star.cov)
    const = kl_gaussian(base, GaussianDist(family.p_star.mean, q_cov))
    prec_q = np.linalg.inv(q_cov)
    best_alpha, best_kl = None, math.inf
    for alpha in simplex_lattice(k, grid_res):
        diff = (alpha @ family.centers) / k - family.p_star.mean
        kl = const + 0.5 * float(diff @ prec_q @ diff)
        if kl < best_kl:
            best_alpha, best_kl = alpha, kl
    return best_alpha, best_kl


def arml_closed_form_check(family: GaussianFamily, alpha, theta) -> float:
    """Residual of the identity: surrogate score == weighted sum of task scores.

    The weighted-product partition function is constant in theta, so the two
    sides agree exactly; returns the norm of the numerical residual
    (contract: < 1e-10).
    """
    alpha = check_simplex(alpha, total=family.num_tasks)
    theta = np.asarray(theta, dtype=np.float64)
    lhs = surrogate_prior(family, alpha).score(theta)
    prec = np.linalg.inv(family.covariance)
    rhs = np.zeros_like(lhs)
    for a_k, spec in zip(alpha, family.specs):
        rhs += a_k * -(prec @ (theta - spec.center))
    return float(np.linalg.norm(lhs - rhs))


@dataclass(frozen=True)
class NearOptimalityReport:
    """How far a learned alpha's KL sits above the lattice optimum.
    Reported, not asserted against unknowable constants."""

    kl_hat: float
    kl_star: float
    gap: float
    alpha_star: np.ndarray


def near_optimality_probe(family: GaussianFamily, alpha_hat,
                          grid_res: float = 0.05) -> NearOptimalityReport:
    alpha_hat = check_simplex(alpha_hat, total=family.num_tasks)
    alpha_star, kl_star = brute_force_optimal_weights(family, grid_res)
    kl_hat = kl_gaussian(family.p_star, surrogate_prior(family, alpha_hat))
    return NearOptimalityReport(kl_hat, kl_star, kl_hat - kl_star, alpha_star)


def family_task_specs(family: GaussianFamily):
    """The family's specs as plain task specs (for building GaussianTasks)."""
    return [GaussianTaskSpec(s.center, s.covariance) for s in family.specs]
