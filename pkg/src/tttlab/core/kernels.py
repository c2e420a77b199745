"""Kernel backend selection.

The compiled Cython kernels are used when the extension is importable;
otherwise the NumPy implementation is used. Setting ``TTTLAB_PURE_PYTHON=1``
forces the fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
im2col = _kernels_py.im2col
col2im = _kernels_py.col2im
group_norm_forward = _kernels_py.group_norm_forward
group_norm_backward = _kernels_py.group_norm_backward

if os.environ.get("TTTLAB_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels  # type: ignore[attr-defined]
    except ImportError:  # extension not built
        pass
    else:
        BACKEND = "compiled"
        im2col = _kernels.im2col
        col2im = _kernels.col2im
        group_norm_forward = _kernels.group_norm_forward
        group_norm_backward = _kernels.group_norm_backward


def available_backends() -> list:
    try:
        from . import _kernels  # noqa: F401  # type: ignore[attr-defined]
    except ImportError:
        return ["python"]
    return ["python", "compiled"]


def use_backend(name: str) -> str:
    """Rebind the module-level kernels to ``name``; returns the previous backend."""
    global BACKEND, im2col, col2im, group_norm_forward, group_norm_backward
    if name == "compiled":
        from . import _kernels as mod  # type: ignore[attr-defined]
    elif name == "python":
        mod = _kernels_py
    else:
        raise ValueError(f"unknown kernel backend {name!r}")
    previous = BACKEND
    BACKEND = name
    im2col, col2im = mod.im2col, mod.col2im
    group_norm_forward, group_norm_backward = mod.group_norm_forward, mod.group_norm_backward
    return previous
