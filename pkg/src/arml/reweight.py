"""Task-weight updates: score matching on the scaled simplex, plus baselines.

Weights alpha live in A = {alpha | sum_k alpha_k = K, alpha_k >= 0}, which
decouples relative task importance from the global auxiliary strength. All
updates act on the shared-segment scores captured in a GradientSnapshot;
the same convention is applied to the baselines for comparability.

AdaLoss and GradNorm here are simplified, inspired-by variants of the cited
balancing schemes (uncertainty-inverse weights, norm balancing with a
detached target); the exact originals are out of scope.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from arml import backend

SIMPLEX_ATOL = 1e-9


@dataclass
class GradientSnapshot:
    """Shared-segment scores of the main and auxiliary tasks at one iterate."""

    g_main: np.ndarray
    g_aux: np.ndarray  # stacked (K, d)
    iteration: int = 0

    def __post_init__(self):
        self.g_main = np.asarray(self.g_main, dtype=np.float64)
        self.g_aux = np.atleast_2d(np.asarray(self.g_aux, dtype=np.float64))
        if self.g_main.ndim != 1:
            raise ValueError("g_main must be a vector")
        if self.g_aux.shape[1] != self.g_main.shape[0]:
            raise ValueError("g_aux and g_main dimensions differ")
        if not (np.isfinite(self.g_main).all() and np.isfinite(self.g_aux).all()):
            raise ValueError("snapshot contains non-finite gradients")

    @property
    def num_tasks(self) -> int:
        return self.g_aux.shape[0]


def check_simplex(alpha, total=None, atol=SIMPLEX_ATOL) -> np.ndarray:
    """Validate sum(alpha) == total (default K) and alpha >= 0; returns float64."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if total is None:
        total = float(alpha.size)
    if alpha.min(initial=np.inf) < 0:
        raise ValueError(f"weights must be non-negative, got {alpha}")
    if abs(alpha.sum() - total) > atol * max(1.0, abs(total)):
        raise ValueError(f"weights must sum to {total}, got sum {alpha.sum()!r}")
    return alpha


def _check_pair(snap: GradientSnapshot, alpha) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (snap.num_tasks,):
        raise ValueError(
            f"alpha length {alpha.shape} does not match K={snap.num_tasks}")
    return alpha


def project_simplex(v, total: float) -> np.ndarray:
    """Euclidean projection of v onto {x >= 0, sum(x) = total}."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("v must be a non-empty vector")
    if not np.all(np.isfinite(v)):
        raise ValueError("v must be finite")
    if total <= 0:
        raise ValueError("total must be positive")
    return backend.project_simplex(v, float(total))


def arml_objective(snap: GradientSnapshot, alpha) -> float:
    """Squared distance between the main score and the weighted aux scores."""
    alpha = _check_pair(snap, alpha)
    return float(backend.weight_objective(snap.g_main, snap.g_aux, alpha))


def arml_weight_gradient(snap: GradientSnapshot, alpha) -> np.ndarray:
    """Analytic d/d alpha of :func:`arml_objective`: -2 g_aux[k] . residual."""
    alpha = _check_pair(snap, alpha)
    return backend.weight_gradient(snap.g_main, snap.g_aux, alpha)


def arml_update(alpha, snap: GradientSnapshot, beta: float) -> np.ndarray:
    """Projected gradient step on the matching objective."""
    if beta <= 0:
        raise ValueError("weight learning rate beta must be positive")
    alpha = _check_pair(snap, alpha)
    return backend.weight_step(alpha, snap.g_main, snap.g_aux, float(beta),
                               float(snap.num_tasks))


def cosine_sim_weights(snap: GradientSnapshot) -> np.ndarray:
    """0/1 mask keeping tasks whose gradient cosine with the main task is >= 0.

    Mask semantics: no renormalization, so the result is generally not on the
    simplex. A zero-norm gradient has cosine 0 and is kept (boundary kept).
    """
    norms = np.linalg.norm(snap.g_aux, axis=1) * np.linalg.norm(snap.g_main)
    dots = snap.g_aux @ snap.g_main
    cos = np.divide(dots, norms, out=np.zeros_like(dots), where=norms > 0)
    return (cos >= 0.0).astype(np.float64)


def ol_aux_update(alpha, snap: GradientSnapshot, beta: float) -> np.ndarray:
    """Raise weights with positive main/aux gradient inner product, then project.

    The projection onto the simplex is added for comparability across schemes.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    alpha = _check_pair(snap, alpha)
    stepped = alpha + beta * (snap.g_aux @ snap.g_main)
    return backend.project_simplex(stepped, float(snap.num_tasks))


def adaloss_weights(recent_losses, delta: float = 1e-8) -> np.ndarray:
    """Uncertainty-inverse weights: alpha_k proportional to 1/(|loss_k| + delta)."""
    losses = np.asarray(recent_losses, dtype=np.float64)
    if losses.ndim != 1 or losses.size == 0:
        raise ValueError("recent_losses must be a non-empty vector")
    if not np.all(np.isfinite(losses)):
        raise ValueError("losses must be finite")
    inv = 1.0 / (np.abs(losses) + delta)
    return losses.size * inv / inv.sum()


def gradnorm_update(alpha, snap: GradientSnapshot, relative_rates, beta: float,
                    gamma: float = 1.0) -> np.ndarray:
    """Norm-balancing step: push each ||alpha_k g_k|| toward the mean norm.

    Subgradient step on sum_k | ||alpha_k g_k|| - mean_j ||alpha_j g_j|| *
    rate_k^gamma | with the target treated as constant, followed by simplex
    projection. sign(0) is taken as 0, so the balanced point is a fixed point.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    alpha = _check_pair(snap, alpha)
    rates = np.asarray(relative_rates, dtype=np.float64)
    if rates.shape != alpha.shape:
        raise ValueError("relative_rates must have one entry per task")
    norms = np.linalg.norm(snap.g_aux, axis=1)
    weighted = alpha * norms
    target = weighted.mean() * rates**gamma
    grad = np.sign(weighted - target) * norms
    return backend.project_simplex(alpha - beta * grad, float(alpha.size))


@dataclass
class GridSearchResult:
    alpha: np.ndarray
    index: int
    scores: list[float]


def grid_search(candidates, evaluate) -> GridSearchResult:
    """Score every candidate weight vector; lowest score wins, ties by index."""
    candidates = [check_simplex(c) for c in candidates]
    if not candidates:
        raise ValueError("candidate list must be non-empty")
    scores = [float(evaluate(c)) for c in candidates]
    best = min(range(len(scores)), key=lambda i: (scores[i], i))
    return GridSearchResult(candidates[best].copy(), best, scores)


# ---------------------------------------------------------------------------
# Per-run reweighter objects used by the trainer. ``update`` maps the current
# weights to the next ones given the post-step gradient snapshot and the
# current per-task auxiliary losses.
# ---------------------------------------------------------------------------


class Reweighter:
    name = "abstract"
    on_simplex = True  # whether updates keep alpha in A

    def update(self, alpha, snap: GradientSnapshot, aux_losses) -> np.ndarray:
        raise NotImplementedError


class UniformReweighter(Reweighter):
    name = "uniform"

    def update(self, alpha, snap, aux_losses):
        return alpha


class FixedReweighter(Reweighter):
    """Pins the weights to a constant vector (grid-search candidates)."""

    name = "fixed"

    def __init__(self, alpha):
        self.alpha = check_simplex(alpha)

    def update(self, alpha, snap, aux_losses):
        return self.alpha.copy()


@dataclass
class ArmlReweighter(Reweighter):
    """Score-matching weight learner; optional EMA over snapshots (off by default)."""

    beta: float
    snapshot_ema: float = 0.0
    name: str = field(default="arml", init=False)
    _ema_main: np.ndarray | None = field(default=None, init=False, repr=False)
    _ema_aux: np.ndarray | None = field(default=None, init=False, repr=False)

    def update(self, alpha, snap, aux_losses):
        if self.snapshot_ema > 0.0:
            d = self.snapshot_ema
            if self._ema_main is None:
                self._ema_main = snap.g_main.copy()
                self._ema_aux = snap.g_aux.copy()
            else:
                self._ema_main = d * self._ema_main + (1.0 - d) * snap.g_main
                self._ema_aux = d * self._ema_aux + (1.0 - d) * snap.g_aux
            snap = GradientSnapshot(self._ema_main, self._ema_aux, snap.iteration)
        return arml_update(alpha, snap, self.beta)


@dataclass
class OlAuxReweighter(Reweighter):
    beta: float
    name: str = field(default="ol_aux", init=False)

    def update(self, alpha, snap, aux_losses):
        return ol_aux_update(alpha, snap, self.beta)


class CosineSimReweighter(Reweighter):
    name = "cosine"
    on_simplex = False  # mask semantics

    def update(self, alpha, snap, aux_losses):
        return cosine_sim_weights(snap)


class AdaLossReweighter(Reweighter):
    name = "adaloss"

    def update(self, alpha, snap, aux_losses):
        return adaloss_weights(aux_losses)


class GradNormReweighter(Reweighter):
    name = "gradnorm"

    def __init__(self, beta, gamma=1.0):
        self.beta = beta
        self.gamma = gamma
        self._initial = None

    def update(self, alpha, snap, aux_losses):
        losses = np.abs(np.asarray(aux_losses, dtype=np.float64)) + 1e-12
        if self._initial is None:
            self._initial = losses.copy()
        rates = losses / self._initial
        rates = rates / rates.mean()
        return gradnorm_update(alpha, snap, rates, self.beta, self.gamma)


def make_reweighter(kind: str, beta: float, **params) -> Reweighter:
    if kind == "uniform":
        return UniformReweighter()
    if kind == "arml":
        return ArmlReweighter(beta, snapshot_ema=params.get("snapshot_ema", 0.0))
    if kind == "ol_aux":
        return OlAuxReweighter(beta)
    if kind == "cosine":
        return CosineSimReweighter()
    if kind == "adaloss":
        return AdaLossReweighter()
    if kind == "gradnorm":
        return GradNormReweighter(beta, gamma=params.get("gamma", 1.0))
    if kind == "fixed":
        return FixedReweighter(params["alpha"])
    raise ValueError(f"unknown reweighter kind {kind!r}")
