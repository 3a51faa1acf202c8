"""Joint training with auxiliary-task weight learning.

Two modes:

* ``alg1`` (two-stage): a sampling stage injects Gaussian noise of variance
  ``2 * eps_t`` into each ascent step so the iterates sample the joint
  density, and the weights are updated from post-step gradient snapshots;
  once the weight EMA stabilizes (or a hard cap is hit) the run switches to
  plain noiseless SGD with frozen weights.
* ``alg2`` (single-stage): the step (optionally noised) and the weight update
  run every iteration until the end.

Determinism: batch indices, injected noise and parameter init each draw from
their own RNG substream, so toggling noise or the weight learner never
perturbs batch order, and identical (config, seed) reproduces a run bit for
bit.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from arml import backend
from arml.core import ParamVector, RngState, sample_gaussian_vector
from arml.reweight import (GradientSnapshot, Reweighter, arml_objective,
                           check_simplex)

# RNG substream ids (seed is shared; streams are independent).
STREAM_BATCH = 1
STREAM_NOISE = 2
STREAM_INIT = 3

EMA_DECAY = 0.99  # weight-convergence EMA

STAGE_SAMPLING = "sampling"
STAGE_OPTIMIZING = "optimizing"


class NumericError(RuntimeError):
    """Non-finite loss or parameters; carries the failing iteration."""

    def __init__(self, message: str, iteration: int):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration


@dataclass
class TrainerConfig:
    iterations: int
    mode: str = "alg1"
    lr_schedule: tuple = ((0, 1e-3),)  # piecewise-constant (start_iter, eps)
    weight_lr: float = 0.005
    batch_size_main: int = 0  # 0 means full batch
    batch_size_aux: int = 0
    langevin: bool = True  # alg2 only; alg1 stage 1 always samples
    convergence_tol: float = 1e-3
    convergence_window: int = 100
    max_stage1_iters: int | None = None
    seed: int = 0
    prior_weight: float = 0.0  # lambda of the optional -lambda*||theta||^2 prior
    init_std: float = 0.0

    def __post_init__(self):
        if self.mode not in ("alg1", "alg2"):
            raise ValueError(f"mode must be alg1 or alg2, got {self.mode!r}")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        sched = tuple((int(s), float(e)) for s, e in self.lr_schedule)
        if not sched or sched[0][0] > 1:
            raise ValueError("lr_schedule must start at iteration 0 or 1")
        starts = [s for s, _ in sched]
        if starts != sorted(starts):
            raise ValueError("lr_schedule start iterations must be ascending")
        if any(e <= 0 for _, e in sched):
            raise ValueError("learning rates must be positive")
        self.lr_schedule = sched
        if self.weight_lr <= 0:
            raise ValueError("weight_lr must be positive")
        if self.convergence_window < 1:
            raise ValueError("convergence_window must be >= 1")
        if self.convergence_tol <= 0:
            raise ValueError("convergence_tol must be positive")
        if self.max_stage1_iters is None:
            self.max_stage1_iters = max(1, self.iterations // 2)
        if self.max_stage1_iters < 1:
            raise ValueError("max_stage1_iters must be >= 1")
        if self.batch_size_main < 0 or self.batch_size_aux < 0:
            raise ValueError("batch sizes must be >= 0 (0 = full batch)")
        if self.prior_weight < 0 or self.init_std < 0:
            raise ValueError("prior_weight and init_std must be >= 0")

    def lr_at(self, iteration: int) -> float:
        eps = self.lr_schedule[0][1]
        for start, value in self.lr_schedule:
            if start <= iteration:
                eps = value
            else:
                break
        return eps


@dataclass
class MetricsRecord:
    iteration: int
    stage: str
    main_loss: float
    aux_losses: tuple
    alpha: tuple
    arml_objective: float
    grad_norm_main: float


@dataclass
class TrainResult:
    final_theta: ParamVector
    weight_trajectory: list  # (iteration, alpha array)
    loss_trajectory: list[MetricsRecord]
    converged_at: int | None


@dataclass
class NoiseReport:
    grad_noise_std: float
    injected_noise_std: float
    ratio: float


def langevin_step(theta: np.ndarray, joint_grad: np.ndarray, eps: float,
                  rng: RngState) -> np.ndarray:
    """theta + eps * joint_grad + eta, with eta ~ N(0, 2*eps) per coordinate."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    if not np.all(np.isfinite(joint_grad)):
        raise NumericError("non-finite gradient in langevin step", -1)
    noise = sample_gaussian_vector(rng, theta.size, 0.0, math.sqrt(2.0 * eps))
    return backend.step_update(theta, joint_grad, eps, noise)


def sgd_step(theta: np.ndarray, joint_grad: np.ndarray, eps: float) -> np.ndarray:
    if eps <= 0:
        raise ValueError("eps must be positive")
    if not np.all(np.isfinite(joint_grad)):
        raise NumericError("non-finite gradient in sgd step", -1)
    return backend.step_update(theta, joint_grad, eps, None)


def joint_log_likelihood(theta: ParamVector, main, aux, alpha, batches,
                         prior_weight: float = 0.0) -> float:
    """Weighted joint objective: main + sum_k alpha_k * aux_k (+ prior)."""
    main_batch, aux_batches = batches
    total = main.log_likelihood(theta, main_batch)
    for a_k, task, batch in zip(alpha, aux, aux_batches):
        total += a_k * task.log_likelihood(theta, batch)
    if prior_weight:
        total -= prior_weight * float(theta.values @ theta.values)
    return float(total)


def joint_grad(theta: ParamVector, main, aux, alpha, batches,
               prior_weight: float = 0.0) -> np.ndarray:
    """Gradient of :func:`joint_log_likelihood` over the full layout."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (len(aux),):
        raise ValueError("alpha length must match the number of auxiliary tasks")
    main_batch, aux_batches = batches
    grad = main.grad_log_likelihood(theta, main_batch)
    for a_k, task, batch in zip(alpha, aux, aux_batches):
        grad += a_k * task.grad_log_likelihood(theta, batch)
    if prior_weight:
        grad -= 2.0 * prior_weight * theta.values
    return grad


def weight_convergence_check(trajectory, tol: float, window: int,
                             decay: float = EMA_DECAY) -> bool:
    """True iff the weight EMA moved less than ``tol`` (L-inf, strict) over
    the last ``window`` iterations. Needs more than ``window`` entries."""
    if window < 1:
        raise ValueError("window must be >= 1")
    traj = [np.asarray(a, dtype=np.float64) for a in trajectory]
    if len(traj) <= window:
        return False
    ema = traj[0].copy()
    history = [ema.copy()]
    for alpha in traj[1:]:
        ema = decay * ema + (1.0 - decay) * alpha
        history.append(ema.copy())
    drift = np.abs(history[-1] - history[-1 - window]).max()
    return bool(drift < tol)


def _draw_batch(rng: RngState, task, batch_size: int):
    if task.dataset is None:
        return None
    n = task.dataset.n
    if batch_size <= 0 or batch_size >= n:
        return None  # full batch, no stream consumption
    return rng.generator.integers(0, n, size=batch_size)


def _mean_nll(task, theta: ParamVector, batch) -> float:
    """Per-example negative log-likelihood (plain negative value for
    parameter-space tasks, which have no examples)."""
    ll = task.log_likelihood(theta, batch)
    if task.dataset is None:
        return -ll
    return -ll / task.dataset.n


def train(config: TrainerConfig, main, aux, reweighter: Reweighter) -> TrainResult:
    """Run the joint loop; see the module docstring for the two modes."""
    if not aux:
        raise ValueError("need at least one auxiliary task")
    layout = main.layout
    for task in aux:
        if task.layout != layout:
            raise ValueError("all tasks must share one parameter layout")
    k = len(aux)

    rng_batch = RngState(config.seed, STREAM_BATCH)
    rng_noise = RngState(config.seed, STREAM_NOISE)
    rng_init = RngState(config.seed, STREAM_INIT)

    if config.init_std > 0:
        theta = ParamVector(
            sample_gaussian_vector(rng_init, layout.dim, 0.0, config.init_std),
            layout)
    else:
        theta = ParamVector.zeros(layout)

    alpha = np.ones(k)
    # ema is seeded on the first recorded weights, matching
    # weight_convergence_check applied to the recorded trajectory
    ema = None
    ema_hist: deque = deque(maxlen=config.convergence_window + 1)

    two_stage = config.mode == "alg1"
    frozen = False
    converged_at = None
    weight_traj = []
    records = []
    shared = layout.shared

    for t in range(1, config.iterations + 1):
        eps = config.lr_at(t)
        batches = (_draw_batch(rng_batch, main, config.batch_size_main),
                   [_draw_batch(rng_batch, task, config.batch_size_aux)
                    for task in aux])

        noisy = (not frozen) if two_stage else config.langevin
        updating = (not frozen) if two_stage else True

        grad = joint_grad(theta, main, aux, alpha, batches, config.prior_weight)
        if not np.all(np.isfinite(grad)):
            raise NumericError("non-finite joint gradient", t)
        if noisy:
            values = langevin_step(theta.values, grad, eps, rng_noise)
        else:
            values = sgd_step(theta.values, grad, eps)
        if not np.all(np.isfinite(values)):
            raise NumericError("non-finite parameters after step", t)
        theta = theta.with_values(values)

        # Post-step snapshot on the same batches feeds the weight update
        # and the recorded metrics.
        g_main = main.grad_log_likelihood(theta, batches[0])
        g_aux = np.stack([task.grad_log_likelihood(theta, b)
                          for task, b in zip(aux, batches[1])])
        snap = GradientSnapshot(g_main[shared.offset:shared.stop],
                                g_aux[:, shared.offset:shared.stop], t)
        main_loss = _mean_nll(main, theta, batches[0])
        aux_losses = np.array([_mean_nll(task, theta, b)
                               for task, b in zip(aux, batches[1])])
        if not np.isfinite(main_loss) or not np.all(np.isfinite(aux_losses)):
            raise NumericError("non-finite loss", t)

        if updating:
            alpha = np.asarray(reweighter.update(alpha, snap, aux_losses),
                               dtype=np.float64)
            if reweighter.on_simplex:
                alpha = check_simplex(alpha, total=k)

        weight_traj.append((t, alpha.copy()))
        stage = STAGE_SAMPLING if noisy else STAGE_OPTIMIZING
        records.append(MetricsRecord(
            iteration=t,
            stage=stage,
            main_loss=main_loss,
            aux_losses=tuple(aux_losses),
            alpha=tuple(alpha),
            arml_objective=arml_objective(snap, alpha),
            grad_norm_main=float(np.linalg.norm(snap.g_main)),
        ))

        if two_stage and not frozen:
            ema = alpha.copy() if ema is None else \
                EMA_DECAY * ema + (1.0 - EMA_DECAY) * alpha
            ema_hist.append(ema.copy())
            if (len(ema_hist) > config.convergence_window
                    and np.abs(ema_hist[-1] - ema_hist[0]).max()
                    < config.convergence_tol):
                frozen = True
                converged_at = t
            elif t >= config.max_stage1_iters:
                frozen = True  # hard cap; converged_at stays None

    return TrainResult(theta, weight_traj, records, converged_at)


def noise_diagnostic(main, aux, alpha, theta: ParamVector, eps: float,
                     n_batches: int, rng: RngState,
                     batch_size_main: int = 0, batch_size_aux: int = 0,
                     prior_weight: float = 0.0) -> NoiseReport:
    """Compare minibatch gradient noise against the injected sampler noise.

    grad_noise_std: per-coordinate std (ddof=1) of eps * joint_grad across
    ``n_batches`` independently resampled batches, averaged over coordinates.
    injected_noise_std: sqrt(2 * eps), the sampler's per-coordinate std.
    """
    if n_batches < 2:
        raise ValueError("n_batches must be >= 2")
    if eps <= 0:
        raise ValueError("eps must be positive")
    alpha = np.asarray(alpha, dtype=np.float64)
    grads = []
    for _ in range(n_batches):
        batches = (_draw_batch(rng, main, batch_size_main),
                   [_draw_batch(rng, task, batch_size_aux) for task in aux])
        grads.append(eps * joint_grad(theta, main, aux, alpha, batches,
                                      prior_weight))
    grads = np.stack(grads)
    grad_noise = float(grads.std(axis=0, ddof=1).mean())
    injected = math.sqrt(2.0 * eps)
    return NoiseReport(grad_noise, injected, grad_noise / injected)
