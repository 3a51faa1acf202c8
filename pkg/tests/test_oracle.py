import math

import numpy as np
import pytest

from arml.oracle import (GaussianDist, GaussianFamily, NearOptimalityReport,
                         arml_closed_form_check, brute_force_optimal_weights,
                         fisher_divergence_gaussian, gaussian_entropy,
                         kl_gaussian, near_optimality_probe, simplex_lattice,
                         surrogate_prior)
from arml.tasks import GaussianTaskSpec

from conftest import random_spd


def make_family(centers, cov, p_mean, p_cov=None):
    centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    cov = np.asarray(cov, dtype=np.float64)
    if cov.ndim == 0:
        cov = float(cov) * np.eye(centers.shape[1])
    if p_cov is None:
        p_cov = cov / centers.shape[0]
    specs = [GaussianTaskSpec(c, cov) for c in centers]
    return GaussianFamily(specs, GaussianDist(p_mean, p_cov))


def kl_1d_quadrature(mu_p, var_p, mu_q, var_q, intervals=10_000):
    """Simpson's rule for KL between 1-d Gaussians on [-10 sigma, 10 sigma]."""
    sigma = math.sqrt(max(var_p, var_q))
    lo = min(mu_p, mu_q) - 10 * sigma
    hi = max(mu_p, mu_q) + 10 * sigma
    x = np.linspace(lo, hi, intervals + 1)
    log_p = -0.5 * (x - mu_p) ** 2 / var_p - 0.5 * math.log(2 * math.pi * var_p)
    log_q = -0.5 * (x - mu_q) ** 2 / var_q - 0.5 * math.log(2 * math.pi * var_q)
    f = np.exp(log_p) * (log_p - log_q)
    h = (hi - lo) / intervals
    weights = np.ones(intervals + 1)
    weights[1:-1:2] = 4.0
    weights[2:-1:2] = 2.0
    return float(h / 3.0 * (weights @ f))


class TestSurrogatePrior:
    def test_single_task(self):
        fam = make_family([[1.0, 2.0]], np.eye(2) * 2.0, [0.0, 0.0])
        dist = surrogate_prior(fam, [1.0])
        np.testing.assert_allclose(dist.mean, [1.0, 2.0])
        np.testing.assert_allclose(dist.cov, 2.0 * np.eye(2))

    def test_identical_centers_give_same_mean_for_any_alpha(self, rng):
        fam = make_family([[0.5, -1.0]] * 3, np.eye(2), [0.0, 0.0])
        for _ in range(10):
            alpha = 3.0 * rng.dirichlet(np.ones(3))
            np.testing.assert_allclose(surrogate_prior(fam, alpha).mean,
                                       [0.5, -1.0], atol=1e-12)

    def test_two_task_vertex(self):
        fam = make_family([[1.0], [5.0]], [[1.0]], [0.0])
        dist = surrogate_prior(fam, [2.0, 0.0])
        np.testing.assert_allclose(dist.mean, [1.0])
        np.testing.assert_allclose(dist.cov, [[0.5]])

    def test_rejects_alpha_outside_simplex(self):
        fam = make_family([[1.0], [5.0]], [[1.0]], [0.0])
        with pytest.raises(ValueError):
            surrogate_prior(fam, [1.5, 1.0])
        with pytest.raises(ValueError):
            surrogate_prior(fam, [-0.5, 2.5])

    def test_permutation_equivariance(self, rng):
        centers = rng.normal(size=(3, 2))
        cov = random_spd(rng, 2)
        alpha = 3.0 * rng.dirichlet(np.ones(3))
        perm = np.array([2, 0, 1])
        fam = make_family(centers, cov, np.zeros(2))
        fam_p = make_family(centers[perm], cov, np.zeros(2))
        a = surrogate_prior(fam, alpha)
        b = surrogate_prior(fam_p, alpha[perm])
        np.testing.assert_allclose(a.mean, b.mean, atol=1e-12)
        np.testing.assert_allclose(a.cov, b.cov, atol=1e-12)


class TestKlGaussian:
    def test_zero_iff_equal(self, rng):
        for _ in range(10):
            d = int(rng.integers(1, 5))
            dist = GaussianDist(rng.normal(size=d), random_spd(rng, d))
            assert kl_gaussian(dist, dist) == pytest.approx(0.0, abs=1e-12)
            other = GaussianDist(dist.mean + 0.1, dist.cov)
            assert kl_gaussian(dist, other) > 1e-4

    def test_unit_variance_mean_shift(self):
        p = GaussianDist([0.0], [[1.0]])
        q = GaussianDist([1.0], [[1.0]])
        assert kl_gaussian(p, q) == pytest.approx(0.5, abs=1e-12)
        assert kl_gaussian(p, q) == pytest.approx(
            kl_1d_quadrature(0.0, 1.0, 1.0, 1.0), abs=1e-9)

    def test_variance_shift(self):
        p = GaussianDist([0.0], [[1.0]])
        q = GaussianDist([0.0], [[2.0]])
        expected = 0.5 * (math.log(2.0) + 0.5 - 1.0)
        assert kl_gaussian(p, q) == pytest.approx(expected, abs=1e-12)
        assert expected == pytest.approx(0.09657359, abs=1e-7)
        assert kl_gaussian(p, q) == pytest.approx(
            kl_1d_quadrature(0.0, 1.0, 0.0, 2.0), abs=1e-9)

    def test_random_pair_against_quadrature(self, rng):
        for _ in range(5):
            mu_p, mu_q = rng.normal(size=2)
            var_p, var_q = rng.uniform(0.4, 3.0, size=2)
            closed = kl_gaussian(GaussianDist([mu_p], [[var_p]]),
                                 GaussianDist([mu_q], [[var_q]]))
            assert closed == pytest.approx(
                kl_1d_quadrature(mu_p, var_p, mu_q, var_q), abs=1e-8)
            assert closed >= 0.0

    def test_nonnegative_multivariate(self, rng):
        for _ in range(20):
            d = int(rng.integers(1, 6))
            p = GaussianDist(rng.normal(size=d), random_spd(rng, d))
            q = GaussianDist(rng.normal(size=d), random_spd(rng, d))
            assert kl_gaussian(p, q) >= 0.0


class TestFisherDivergence:
    def test_zero_iff_equal(self, rng):
        d = 3
        dist = GaussianDist(rng.normal(size=d), random_spd(rng, d))
        assert fisher_divergence_gaussian(dist, dist) == pytest.approx(0.0,
                                                                       abs=1e-12)

    def test_equal_unit_covariance_mean_shift(self):
        p = GaussianDist([0.0], [[1.0]])
        q = GaussianDist([1.0], [[1.0]])
        assert fisher_divergence_gaussian(p, q) == pytest.approx(1.0, abs=1e-12)

    def test_equal_covariance_closed_form(self, rng):
        d = 4
        cov = random_spd(rng, d)
        mu_p = rng.normal(size=d)
        mu_q = rng.normal(size=d)
        p = GaussianDist(mu_p, cov)
        q = GaussianDist(mu_q, cov)
        expected = float(np.linalg.norm(np.linalg.solve(cov, mu_p - mu_q)) ** 2)
        assert fisher_divergence_gaussian(p, q) == pytest.approx(expected,
                                                                 rel=1e-10)

    def test_against_monte_carlo(self, rng):
        d = 2
        p = GaussianDist(rng.normal(size=d), random_spd(rng, d))
        q = GaussianDist(rng.normal(size=d), random_spd(rng, d))
        closed = fisher_divergence_gaussian(p, q)
        x = rng.multivariate_normal(p.mean, p.cov, size=1_000_000)
        diff = (x - p.mean) @ p.precision().T - (x - q.mean) @ q.precision().T
        mc = float((diff**2).sum(axis=1).mean())
        assert closed == pytest.approx(mc, rel=0.01)
        assert closed >= 0.0


class TestBruteForce:
    def test_point_mass_preference(self):
        # p* sits exactly on the first center (with matched covariance);
        # the second is far away
        fam = make_family([[0.0, 0.0], [8.0, 8.0]], np.eye(2), [0.0, 0.0])
        alpha, kl = brute_force_optimal_weights(fam, 0.05)
        np.testing.assert_allclose(alpha, [2.0, 0.0], atol=1e-12)
        assert kl == pytest.approx(0.0, abs=1e-12)

    def test_mirror_symmetry(self):
        fam = make_family([[1.0, 0.0], [-1.0, 0.0]], np.eye(2), [0.0, 0.0])
        alpha, _ = brute_force_optimal_weights(fam, 0.05)
        np.testing.assert_allclose(alpha, [1.0, 1.0], atol=1e-12)

    def test_exact_tie_broken_lexicographically(self):
        # surrogate means on the lattice hit 0 and 1 exactly; p* mean 0.5 is
        # exactly between them, so the KLs tie in floating point
        fam = make_family([[2.0], [-2.0]], [[1.0]], [0.5])
        alpha, _ = brute_force_optimal_weights(fam, 0.25)
        np.testing.assert_allclose(alpha, [1.0, 1.0], atol=1e-12)

    def test_refining_grid_never_increases_minimum(self, rng):
        centers = rng.normal(0, 2, size=(3, 2))
        mix = rng.dirichlet(np.ones(3))
        fam = make_family(centers, np.eye(2), mix @ centers)
        _, coarse = brute_force_optimal_weights(fam, 0.2)
        _, fine = brute_force_optimal_weights(fam, 0.1)
        _, finest = brute_force_optimal_weights(fam, 0.05)
        assert fine <= coarse + 1e-12
        assert finest <= fine + 1e-12

    def test_lattice_size_and_membership(self):
        pts = list(simplex_lattice(3, 0.1))
        assert len(pts) == math.comb(10 + 2, 2)
        for alpha in pts:
            assert alpha.min() >= 0.0
            assert alpha.sum() == pytest.approx(3.0, abs=1e-9)

    def test_guards(self):
        fam = make_family(np.zeros((5, 1)), [[1.0]], [0.0])
        with pytest.raises(ValueError, match="at most"):
            brute_force_optimal_weights(fam, 0.1)
        fam2 = make_family([[0.0], [1.0]], [[1.0]], [0.0])
        with pytest.raises(ValueError, match="grid_res"):
            brute_force_optimal_weights(fam2, 1.5)
        with pytest.raises(ValueError, match="integer"):
            brute_force_optimal_weights(fam2, 0.3)


class TestClosedFormIdentity:
    def test_weighted_scores_equal_surrogate_score(self, rng):
        """The weighted sum of task scores is exactly the surrogate's score."""
        worst = 0.0
        for _ in range(100):
            d = int(rng.integers(1, 9))
            k = int(rng.integers(1, 5))
            cov = random_spd(rng, d)
            centers = rng.normal(0, 2, size=(k, d))
            fam = make_family(centers, cov, rng.normal(size=d))
            alpha = k * rng.dirichlet(np.ones(k))
            theta = rng.normal(0, 2, size=d)
            worst = max(worst, arml_closed_form_check(fam, alpha, theta))
        assert worst < 1e-10

    def test_zero_at_surrogate_mean(self, rng):
        fam = make_family(rng.normal(size=(3, 2)), np.eye(2), np.zeros(2))
        alpha = np.array([1.0, 1.0, 1.0])
        mean = surrogate_prior(fam, alpha).mean
        assert surrogate_prior(fam, alpha).score(mean) == pytest.approx(0.0,
                                                                        abs=1e-12)
        assert arml_closed_form_check(fam, alpha, mean) < 1e-10


class TestNearOptimalityReport:
    def test_minimizer_has_zero_gap(self):
        fam = make_family([[1.0, 0.0], [-1.0, 0.0]], np.eye(2), [0.3, 0.0])
        alpha_star, _ = brute_force_optimal_weights(fam, 0.05)
        probe = near_optimality_probe(fam, alpha_star, 0.05)
        assert isinstance(probe, NearOptimalityReport)
        assert probe.gap == pytest.approx(0.0, abs=1e-12)

    def test_uniform_on_asymmetric_instance_has_positive_gap(self):
        fam = make_family([[2.0, 0.0], [-2.0, 0.0]], np.eye(2), [1.0, 0.0])
        probe = near_optimality_probe(fam, [1.0, 1.0], 0.05)
        # uniform surrogate mean is 0, one unit away from p*'s mean, with
        # covariance Sigma/K = I/2: KL = 0.5 * 1^2 / 0.5 = 1 nat above optimum
        assert probe.gap == pytest.approx(1.0, abs=1e-9)
        assert probe.kl_hat > probe.kl_star

    def test_fisher_and_kl_grid_minimizers_agree_on_isotropic_family(self, rng):
        """Score matching evaluated at the surrogate mean ranks lattice
        weights like the KL does when the shared covariance is isotropic."""
        for trial in range(5):
            centers = rng.normal(0, 2, size=(3, 2))
            mix = rng.dirichlet(np.ones(3))
            sigma2 = float(rng.uniform(0.5, 2.0))
            fam = make_family(centers, sigma2 * np.eye(2), mix @ centers)
            best_kl, best_fisher = None, None
            val_kl, val_fisher = np.inf, np.inf
            for alpha in simplex_lattice(3, 0.1):
                sp = surrogate_prior(fam, alpha)
                kl = kl_gaussian(fam.p_star, sp)
                # squared residual between p*'s score and the weighted task
                # scores, evaluated at the surrogate mean (where the weighted
                # sum vanishes)
                fisher = float(np.linalg.norm(
                    fam.p_star.score(sp.mean)) ** 2)
                if kl < val_kl:
                    best_kl, val_kl = alpha, kl
                if fisher < val_fisher:
                    best_fisher, val_fisher = alpha, fisher
            assert np.abs(best_kl - best_fisher).max() <= 0.1 * 3 + 1e-12


def test_entropy_is_finite_documentation_extra():
    dist = GaussianDist([0.0], [[1.0]])
    assert math.isfinite(gaussian_entropy(dist))
