"""Kernel backend selection: compiled extension if present, numpy otherwise.

Set ``ARML_KERNELS=python`` or ``ARML_KERNELS=cython`` to force a choice
(``cython`` raises if the extension was not built). The active backend is
recorded in run manifests; a single run never mixes backends.
"""

import os

from arml import _kernels_py

_REQUESTED = os.environ.get("ARML_KERNELS", "auto").lower()
if _REQUESTED not in ("auto", "python", "cython"):
    raise ImportError(
        f"ARML_KERNELS must be 'auto', 'python' or 'cython', got {_REQUESTED!r}")

if _REQUESTED == "python":
    _impl = _kernels_py
    _NAME = "python"
else:
    try:
        from arml import _kernels_cy as _impl
        _NAME = "cython"
    except ImportError:
        if _REQUESTED == "cython":
            raise ImportError(
                "ARML_KERNELS=cython but the compiled extension is unavailable; "
                "reinstall with a C toolchain + Cython or unset ARML_KERNELS")
        _impl = _kernels_py
        _NAME = "python"

project_simplex = _impl.project_simplex
weight_residual = _impl.weight_residual
weight_objective = _impl.weight_objective
weight_gradient = _impl.weight_gradient
weight_step = _impl.weight_step
gaussian_score = _impl.gaussian_score
step_update = _impl.step_update


def kernel_backend() -> str:
    """Name of the kernel implementation in use ('python' or 'cython')."""
    return _NAME
