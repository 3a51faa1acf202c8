"""Task models: data log-likelihood and its gradient in the parameter vector.

Conventions shared by every model:

* ``log_likelihood`` estimates the *total-data* log-likelihood from a batch,
  ``(n / |batch|) * sum_{i in batch} log p(x_i | theta)``, so gradient
  magnitude reflects dataset size (scarce main-task data produces small
  scores). Additive constants independent of theta are omitted; each model
  documents which.
* ``grad_log_likelihood`` returns a full layout-aligned vector; segments the
  task does not own are zero.
* Parameter-space Gaussian tasks model the likelihood directly in theta and
  ignore the batch argument.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from arml import backend
from arml.core import ParamVector, SegmentLayout


class Dataset:
    """Immutable (inputs, targets) pair; targets are float64, 1-d or 2-d."""

    def __init__(self, inputs, targets):
        inputs = np.asarray(inputs, dtype=np.float64)
        targets = np.asarray(targets, dtype=np.float64)
        if inputs.ndim != 2 or inputs.shape[0] < 1:
            raise ValueError("inputs must be a non-empty (n, p) matrix")
        if targets.shape[0] != inputs.shape[0]:
            raise ValueError("targets length must match inputs")
        if np.isnan(inputs).any() or np.isnan(targets).any():
            raise ValueError("dataset contains NaN entries")
        self.inputs = inputs
        self.targets = targets

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def num_features(self) -> int:
        return self.inputs.shape[1]


def load_dataset_csv(path) -> Dataset:
    """Load a Dataset from CSV with header ``x0..x{p-1}`` then ``y`` or ``y0..``."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty CSV") from None
        rows = [row for row in reader if row]
    x_cols = [i for i, name in enumerate(header) if name.startswith("x")]
    y_cols = [i for i, name in enumerate(header) if name.startswith("y")]
    if not x_cols or not y_cols:
        raise ValueError(f"{path}: header must contain x* and y* columns")
    expected_x = [f"x{i}" for i in range(len(x_cols))]
    if [header[i] for i in x_cols] != expected_x:
        raise ValueError(f"{path}: feature columns must be named x0..x{len(x_cols) - 1}")
    data = np.array([[float(cell) for cell in row] for row in rows], dtype=np.float64)
    if data.size == 0:
        raise ValueError(f"{path}: no data rows")
    inputs = data[:, x_cols]
    targets = data[:, y_cols]
    if targets.shape[1] == 1:
        targets = targets[:, 0]
    return Dataset(inputs, targets)


def write_dataset_csv(dataset: Dataset, path) -> None:
    """Inverse of :func:`load_dataset_csv` (17 significant digits)."""
    targets = dataset.targets
    if targets.ndim == 1:
        y_names = ["y"]
        targets = targets[:, None]
    else:
        y_names = [f"y{i}" for i in range(targets.shape[1])]
    header = [f"x{i}" for i in range(dataset.num_features)] + y_names
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for xi, yi in zip(dataset.inputs, targets):
            row = [f"{v:.17g}" for v in xi] + [f"{v:.17g}" for v in yi]
            fh.write(",".join(row) + "\n")


@dataclass(frozen=True)
class GaussianTaskSpec:
    """Parameter-space Gaussian: likelihood proportional to N(theta | center, cov)."""

    center: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        center = np.asarray(self.center, dtype=np.float64)
        cov = as_covariance(self.covariance, center.shape[0])
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "covariance", cov)

    @property
    def dim(self) -> int:
        return self.center.shape[0]


def as_covariance(cov, dim: int) -> np.ndarray:
    """Normalize scalar / diagonal / full input to a validated SPD matrix."""
    cov = np.asarray(cov, dtype=np.float64)
    if cov.ndim == 0:
        cov = float(cov) * np.eye(dim)
    elif cov.ndim == 1:
        if cov.shape[0] != dim:
            raise ValueError("diagonal covariance has wrong length")
        cov = np.diag(cov)
    if cov.shape != (dim, dim):
        raise ValueError(f"covariance must be {dim}x{dim}")
    if not np.allclose(cov, cov.T, atol=1e-12):
        raise ValueError("covariance must be symmetric")
    if np.linalg.eigvalsh(cov).min() <= 1e-12:
        raise ValueError("covariance must be positive definite (eigenvalues > 1e-12)")
    return cov


def _resolve_batch(n: int, batch) -> np.ndarray:
    if batch is None:
        return np.arange(n)
    batch = np.asarray(batch)
    if batch.size == 0:
        raise ValueError("batch must be non-empty")
    if batch.min() < 0 or batch.max() >= n:
        raise ValueError(f"batch indices must lie in [0, {n})")
    return batch.astype(np.intp)


class TaskModel:
    """Base class: a likelihood over data (or parameters) tied to a layout."""

    kind = "abstract"

    def __init__(self, layout: SegmentLayout, dataset: Dataset | None,
                 head_id: int | None):
        self.layout = layout
        self.dataset = dataset
        self.head_id = head_id
        if head_id is not None:
            layout.head(head_id)  # existence check

    def log_likelihood(self, theta: ParamVector, batch=None) -> float:
        raise NotImplementedError

    def grad_log_likelihood(self, theta: ParamVector, batch=None) -> np.ndarray:
        raise NotImplementedError

    def _check_theta(self, theta: ParamVector):
        if theta.layout is not self.layout and theta.layout != self.layout:
            raise ValueError("parameter vector layout does not match task layout")


class GaussianTask(TaskModel):
    """log p = -1/2 (theta_s - center)^T Sigma^-1 (theta_s - center).

    The normalizer (constant in theta) is omitted, so the mode evaluates
    to exactly zero. Batches are ignored: the model lives in theta-space.
    """

    kind = "gaussian"

    def __init__(self, spec: GaussianTaskSpec, layout: SegmentLayout):
        super().__init__(layout, dataset=None, head_id=None)
        if spec.dim != layout.shared.length:
            raise ValueError("Gaussian spec dimension must match the shared segment")
        self.spec = spec
        self.precision = np.linalg.inv(spec.covariance)
        self.precision = 0.5 * (self.precision + self.precision.T)

    def log_likelihood(self, theta, batch=None):
        self._check_theta(theta)
        diff = theta.shared() - self.spec.center
        return float(-0.5 * diff @ (self.precision @ diff))

    def grad_log_likelihood(self, theta, batch=None):
        self._check_theta(theta)
        grad = np.zeros(self.layout.dim)
        seg = self.layout.shared
        grad[seg.offset:seg.stop] = backend.gaussian_score(
            self.precision, theta.shared(), self.spec.center)
        return grad


class _GlmTask(TaskModel):
    """Shared plumbing for models whose weights are shared (+ optional head)."""

    def __init__(self, dataset: Dataset, layout: SegmentLayout, head_id=None):
        super().__init__(layout, dataset, head_id)
        width = layout.shared.length
        if head_id is not None:
            width += layout.head(head_id).length
        if width != dataset.num_features:
            raise ValueError(
                f"{self.kind}: weight width {width} != feature count "
                f"{dataset.num_features}")

    def _weights(self, theta: ParamVector) -> np.ndarray:
        if self.head_id is None:
            return theta.shared()
        return np.concatenate([theta.shared(),
                               self.layout.head_slice(theta.values, self.head_id)])

    def _scatter(self, w_grad: np.ndarray) -> np.ndarray:
        grad = np.zeros(self.layout.dim)
        s = self.layout.shared
        grad[s.offset:s.stop] = w_grad[:s.length]
        if self.head_id is not None:
            h = self.layout.head(self.head_id)
            grad[h.offset:h.stop] = w_grad[s.length:]
        return grad


class LinearRegressionTask(_GlmTask):
    """Gaussian regression y ~ N(X w, noise_std^2).

    Omitted constant: -(n/2) ln(2 pi noise_std^2); a perfect fit therefore
    scores exactly zero.
    """

    kind = "linear_regression"

    def __init__(self, dataset, layout, noise_std=1.0, head_id=None):
        super().__init__(dataset, layout, head_id)
        if dataset.targets.ndim != 1:
            raise ValueError("linear regression expects scalar targets")
        if noise_std <= 0:
            raise ValueError("noise_std must be positive")
        self.noise_std = float(noise_std)

    def log_likelihood(self, theta, batch=None):
        self._check_theta(theta)
        idx = _resolve_batch(self.dataset.n, batch)
        x = self.dataset.inputs[idx]
        y = self.dataset.targets[idx]
        resid = y - x @ self._weights(theta)
        scale = self.dataset.n / idx.size
        return float(-0.5 * scale * (resid @ resid) / self.noise_std**2)

    def grad_log_likelihood(self, theta, batch=None):
        self._check_theta(theta)
        idx = _resolve_batch(self.dataset.n, batch)
        x = self.dataset.inputs[idx]
        y = self.dataset.targets[idx]
        resid = y - x @ self._weights(theta)
        scale = self.dataset.n / idx.size
        return self._scatter(scale * (x.T @ resid) / self.noise_std**2)


class LogisticRegressionTask(_GlmTask):
    """Bernoulli labels in {0, 1} with p = sigmoid(X w). No constants omitted."""

    kind = "logistic_regression"

    def __init__(self, dataset, layout, head_id=None):
        super().__init__(dataset, layout, head_id)
        labels = np.unique(dataset.targets)
        if not np.all(np.isin(labels, (0.0, 1.0))):
            raise ValueError("logistic targets must be 0/1")

    def log_likelihood(self, theta, batch=None):
        self._check_theta(theta)
        idx = _resolve_batch(self.dataset.n, batch)
        x = self.dataset.inputs[idx]
        y = self.dataset.targets[idx]
        z = x @ self._weights(theta)
        # y*log(sigmoid(z)) + (1-y)*log(1-sigmoid(z)), stable in both tails
        ll = -(1.0 - y) * z - np.logaddexp(0.0, -z)
        scale = self.dataset.n / idx.size
        return float(scale * ll.sum())

    def grad_log_likelihood(self, theta, batch=None):
        self._check_theta(theta)
        idx = _resolve_batch(self.dataset.n, batch)
        x = self.dataset.inputs[idx]
        y = self.dataset.targets[idx]
        z = x @ self._weights(theta)
        p = 1.0 / (1.0 + np.exp(-z))
        scale = self.dataset.n / idx.size
        return self._scatter(scale * (x.T @ (y - p)))


class MlpTask(TaskModel):
    """tanh MLP with a linear scalar head and Gaussian output likelihood.

    Trunk layers live in the shared segment; the final linear layer lives in
    the task's head segment (or in the shared segment for a single headless
    task, covering the degenerate zero-hidden-layer case that reduces to
    linear regression). Gradients come from manual backprop. The omitted
    constant is -(n/2) ln(2 pi noise_std^2).
    """

    kind = "mlp"

    def __init__(self, dataset, layout, hidden, head_id=None, noise_std=1.0):
        super().__init__(layout, dataset, head_id)
        if dataset.targets.ndim != 1:
            raise ValueError("mlp task expects scalar targets")
        hidden = tuple(int(h) for h in hidden)
        if any(h < 1 for h in hidden):
            raise ValueError("hidden layer sizes must be >= 1")
        if noise_std <= 0:
            raise ValueError("noise_std must be positive")
        self.hidden = hidden
        self.noise_std = float(noise_std)
        p = dataset.num_features
        self._shapes = []
        prev = p
        for h in hidden:
            self._shapes.append((h, prev))
            prev = h
        self._head_shape = (1, prev)
        trunk = sum(h * w + h for h, w in self._shapes)
        head = prev + 1
        if head_id is None:
            if layout.shared.length != trunk + head:
                raise ValueError("shared segment must hold trunk + head parameters")
        else:
            if layout.shared.length != trunk:
                raise ValueError("shared segment must hold the trunk parameters")
            if layout.head(head_id).length != head:
                raise ValueError("head segment must hold the final linear layer")

    @staticmethod
    def trunk_size(num_features: int, hidden) -> int:
        prev = num_features
        total = 0
        for h in hidden:
            total += h * prev + h
            prev = h
        return total

    @staticmethod
    def head_size(num_features: int, hidden) -> int:
        prev = num_features if not hidden else hidden[-1]
        return prev + 1

    def _unpack(self, theta: ParamVector):
        flat = theta.shared()
        if self.head_id is not None:
            flat = np.concatenate([flat, self.layout.head_slice(theta.values, self.head_id)])
        params, off = [], 0
        for h, w in self._shapes:
            W = flat[off:off + h * w].reshape(h, w)
            off += h * w
            b = flat[off:off + h]
            off += h
            params.append((W, b))
        w_head = flat[off:off + self._head_shape[1]]
        b_head = flat[off + self._head_shape[1]]
        return params, w_head, b_head

    def _forward(self, x, params, w_head, b_head):
        acts = [x]
        a = x
        for W, b in params:
            a = np.tanh(a @ W.T + b)
            acts.append(a)
        out = a @ w_head + b_head
        return out, acts

    def log_likelihood(self, theta, batch=None):
        self._check_theta(theta)
        idx = _resolve_batch(self.dataset.n, batch)
        params, w_head, b_head = self._unpack(theta)
        out, _ = self._forward(self.dataset.inputs[idx], params, w_head, b_head)
        resid = self.dataset.targets[idx] - out
        scale = self.dataset.n / idx.size
        return float(-0.5 * scale * (resid @ resid) / self.noise_std**2)

    def grad_log_likelihood(self, theta, batch=None):
        self._check_theta(theta)
        idx = _resolve_batch(self.dataset.n, batch)
        x = self.dataset.inputs[idx]
        y = self.dataset.targets[idx]
        params, w_head, b_head = self._unpack(theta)
        out, acts = self._forward(x, params, w_head, b_head)
        scale = self.dataset.n / idx.size
        delta = scale * (y - out) / self.noise_std**2  # d loglik / d out
        g_head_w = acts[-1].T @ delta
        g_head_b = delta.sum()
        back = np.outer(delta, w_head)
        grads = []
        for layer in range(len(params) - 1, -1, -1):
            W, _ = params[layer]
            pre = back * (1.0 - acts[layer + 1] ** 2)  # tanh'
            grads.append((acts[layer].T @ pre, pre.sum(axis=0)))
            back = pre @ W
        grads.reverse()
        flat = []
        for gw, gb in grads:
            flat.extend([gw.T.ravel(), gb])
        flat.extend([g_head_w, np.array([g_head_b])])
        full = np.concatenate(flat)
        grad = np.zeros(self.layout.dim)
        s = self.layout.shared
        if self.head_id is None:
            grad[s.offset:s.stop] = full
        else:
            grad[s.offset:s.stop] = full[:s.length]
            h = self.layout.head(self.head_id)
            grad[h.offset:h.stop] = full[s.length:]
        return grad


def make_mlp_task(hidden, dataset: Dataset, noise_std=1.0) -> MlpTask:
    """Single-task MLP owning its whole parameter vector as the shared segment."""
    dim = MlpTask.trunk_size(dataset.num_features, tuple(hidden)) + \
        MlpTask.head_size(dataset.num_features, tuple(hidden))
    layout = SegmentLayout.single_shared(dim)
    return MlpTask(dataset, layout, hidden, head_id=None, noise_std=noise_std)


def make_shared_mlp_tasks(hidden, datasets, noise_std=1.0):
    """MLP tasks sharing one trunk, one head segment per task.

    ``datasets`` is an ordered mapping task_id -> Dataset; all datasets must
    share the feature count. Returns (layout, {task_id: MlpTask}).
    """
    hidden = tuple(int(h) for h in hidden)
    if not hidden:
        raise ValueError("shared-trunk MLPs need at least one hidden layer")
    widths = {ds.num_features for ds in datasets.values()}
    if len(widths) != 1:
        raise ValueError("all datasets must share the feature count")
    p = widths.pop()
    trunk = MlpTask.trunk_size(p, hidden)
    head = MlpTask.head_size(p, hidden)
    layout = SegmentLayout.shared_with_heads(trunk, {tid: head for tid in datasets})
    tasks = {tid: MlpTask(ds, layout, hidden, head_id=tid, noise_std=noise_std)
             for tid, ds in datasets.items()}
    return layout, tasks


def finite_diff_grad(task: TaskModel, theta: ParamVector, batch=None,
                     h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of ``task.log_likelihood`` (oracle)."""
    if h <= 0:
        raise ValueError("finite-difference step h must be positive")
    base = theta.values
    grad = np.empty_like(base)
    for i in range(base.size):
        plus = base.copy()
        plus[i] += h
        minus = base.copy()
        minus[i] -= h
        lp = task.log_likelihood(theta.with_values(plus), batch)
        lm = task.log_likelihood(theta.with_values(minus), batch)
        grad[i] = (lp - lm) / (2.0 * h)
    return grad
