"""arml: auxiliary-task reweighting for data-scarce joint training.

Learns per-task weights on the scaled simplex by matching the weighted
auxiliary score functions to the main task's score along a noisy (Langevin)
training trajectory, so that the auxiliary tasks act as the best available
surrogate prior for the main task. Ships baselines (uniform, AdaLoss-style,
GradNorm-style, cosine filtering, inner-product ascent, grid search), an
exact Gaussian weight oracle for desk-scale verification, and a seeded,
reproducible experiment harness with a CLI.
"""

__version__ = "0.1.0"
