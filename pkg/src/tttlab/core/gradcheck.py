"""Central finite-difference oracle for autodiff gradients."""

from __future__ import annotations

from typing import Callable, Dict

import numpy as np

from .optim import ParamTape
from .tensor import Tensor, backward


def numerical_grad(f: Callable[[], float], arr: np.ndarray, h: float = 1e-3) -> np.ndarray:
    """d f / d arr by central differences, perturbing ``arr`` in place."""
    grad = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """``||a - b|| / max(||a||, ||b||)``; zero when both vanish."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


def check_gradients(loss_fn: Callable[[], Tensor], tape: ParamTape,
                    inputs: Dict[str, Tensor] = None, h: float = 1e-3) -> Dict[str, float]:
    """Relative error between autodiff and finite-difference gradients.

    ``loss_fn`` rebuilds the forward pass from the current values of the tape
    parameters (and of any tensors in ``inputs``, which must have
    ``requires_grad=True``). Returns one relative error per name.
    """
    inputs = inputs or {}
    for t in inputs.values():
        t.grad = None
    loss = loss_fn()
    backward(loss, tape)
    analytic = {n: t.grad.copy() for n, t in tape.items()}
    analytic.update({n: t.grad.copy() for n, t in inputs.items()})

    def f():
        return float(loss_fn().data)

    errors = {}
    for name, t in list(tape.items()) + list(inputs.items()):
        errors[name] = relative_error(analytic[name], numerical_grad(f, t.data, h))
    return errors
