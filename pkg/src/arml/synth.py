"""Synthetic benchmark generators: Gaussian task families for the exact
weight oracle, and regression/classification datasets with a planted shared
representation and a per-task ``relevance`` knob.

Relevance semantics for auxiliary regression targets:

* ``relevance == 1``: targets generated from the main task's planted weights
  (fresh inputs and noise), so auxiliary gradients match the main task's in
  expectation.
* ``relevance == 0``: labels drawn independently of the inputs (matched
  variance), the explicit irrelevant-task generator.
* in between: the planted weight vector is rotated towards an independent
  direction; alignment with the main weights equals ``relevance``.
"""

from __future__ import annotations

import numpy as np

from arml.core import RngState
from arml.oracle import GaussianDist, GaussianFamily
from arml.tasks import Dataset, GaussianTaskSpec

# Substream ids used by data generation (trainer uses 1..3).
STREAM_DATA = 100


def random_gaussian_family(rng: RngState, dim: int, num_tasks: int,
                           center_scale: float = 3.0,
                           sigma2: float | None = None,
                           interior: bool = True) -> GaussianFamily:
    """Random equal-covariance family with isotropic Sigma = sigma2 * I.

    The true prior is N(mu*, Sigma/K) (matched covariance). ``interior``
    places mu* inside the convex hull of the task centers (achievable
    surrogate mean); otherwise mu* is pushed outside the hull so the optimal
    weights sit on the simplex boundary.
    """
    gen = rng.generator
    if sigma2 is None:
        sigma2 = float(gen.uniform(0.5, 2.0))
    centers = gen.normal(0.0, center_scale, size=(num_tasks, dim))
    if interior:
        mix = gen.dirichlet(np.ones(num_tasks))
        mean = mix @ centers
    else:
        # outside the hull: start from a vertex and step away from the centroid
        vertex = centers[int(gen.integers(num_tasks))]
        away = vertex - centers.mean(axis=0)
        norm = np.linalg.norm(away)
        if norm < 1e-9:
            away, norm = np.ones(dim), np.sqrt(dim)
        mean = vertex + center_scale * away / norm
    cov = sigma2 * np.eye(dim)
    specs = [GaussianTaskSpec(c, cov) for c in centers]
    return GaussianFamily(specs, GaussianDist(mean, cov / num_tasks))


def planted_regression(rng: RngState, n: int, weights, noise_std: float) -> Dataset:
    """Inputs ~ N(0, I); targets = X @ weights + N(0, noise_std^2)."""
    weights = np.asarray(weights, dtype=np.float64)
    gen = rng.generator
    x = gen.normal(size=(n, weights.size))
    y = x @ weights + noise_std * gen.standard_normal(n)
    return Dataset(x, y)


def relevance_weights(rng: RngState, base, relevance: float) -> np.ndarray | None:
    """Planted weights for an auxiliary task at a given relevance.

    Returns None for relevance 0 (labels must be input-independent).
    """
    if not 0.0 <= relevance <= 1.0:
        raise ValueError("relevance must lie in [0, 1]")
    base = np.asarray(base, dtype=np.float64)
    if relevance == 0.0:
        return None
    if relevance == 1.0:
        return base.copy()
    other = rng.generator.normal(size=base.size)
    other -= (other @ base) / (base @ base) * base  # orthogonalize
    other *= np.linalg.norm(base) / np.linalg.norm(other)
    mixed = relevance * base + np.sqrt(1.0 - relevance**2) * other
    return mixed


def relevance_regression(rng: RngState, n: int, base_weights,
                         relevance: float, noise_std: float) -> Dataset:
    """Auxiliary regression dataset at the given relevance to ``base_weights``."""
    base = np.asarray(base_weights, dtype=np.float64)
    w = relevance_weights(rng, base, relevance)
    gen = rng.generator
    x = gen.normal(size=(n, base.size))
    if w is None:
        # irrelevant task: labels independent of inputs, variance matched
        scale = float(np.sqrt(base @ base + noise_std**2))
        y = scale * gen.standard_normal(n)
    else:
        y = x @ w + noise_std * gen.standard_normal(n)
    return Dataset(x, y)


def planted_classification(rng: RngState, n: int, weights) -> Dataset:
    """Inputs ~ N(0, I); labels ~ Bernoulli(sigmoid(X @ weights))."""
    weights = np.asarray(weights, dtype=np.float64)
    gen = rng.generator
    x = gen.normal(size=(n, weights.size))
    p = 1.0 / (1.0 + np.exp(-(x @ weights)))
    y = (gen.random(n) < p).astype(np.float64)
    return Dataset(x, y)


def generate_synthetic(spec: dict, rng: RngState):
    """Build a Dataset or GaussianFamily from a generator spec (CLI/config).

    Supported kinds: ``regression`` (keys: n, num_features, noise_std,
    relevance, optional weights), ``classification`` (n, num_features,
    optional weights) and ``gaussian_family`` (dim, num_tasks, center_scale,
    sigma2, interior). Deterministic given the rng substream.
    """
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind == "regression":
        p = int(spec.pop("num_features"))
        n = int(spec.pop("n"))
        noise_std = float(spec.pop("noise_std", 0.5))
        relevance = float(spec.pop("relevance", 1.0))
        weights = spec.pop("weights", None)
        _reject_extra(spec, "regression generator")
        if weights is None:
            weights = rng.generator.normal(size=p) / np.sqrt(p)
        else:
            weights = np.asarray(weights, dtype=np.float64)
            if weights.size != p:
                raise ValueError("weights length must equal num_features")
        if relevance == 1.0:
            return planted_regression(rng, n, weights, noise_std)
        return relevance_regression(rng, n, weights, relevance, noise_std)
    if kind == "classification":
        p = int(spec.pop("num_features"))
        n = int(spec.pop("n"))
        weights = spec.pop("weights", None)
        _reject_extra(spec, "classification generator")
        if weights is None:
            weights = rng.generator.normal(size=p)
        return planted_classification(rng, n, np.asarray(weights, dtype=np.float64))
    if kind == "gaussian_family":
        dim = int(spec.pop("dim"))
        num_tasks = int(spec.pop("num_tasks"))
        center_scale = float(spec.pop("center_scale", 3.0))
        sigma2 = spec.pop("sigma2", None)
        interior = bool(spec.pop("interior", True))
        _reject_extra(spec, "gaussian_family generator")
        return random_gaussian_family(rng, dim, num_tasks, center_scale,
                                      None if sigma2 is None else float(sigma2),
                                      interior)
    raise ValueError(f"unknown generator kind {kind!r}")


def _reject_extra(spec: dict, what: str):
    if spec:
        raise ValueError(f"unknown keys for {what}: {sorted(spec)}")
