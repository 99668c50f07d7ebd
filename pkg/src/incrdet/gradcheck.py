"""Finite-difference gradient checking for layers and loss functions."""

from __future__ import annotations

import numpy as np


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max of |a - n| / max(|a|, |n|, 1e-12) over all elements."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-12)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def _check_eps(eps: float) -> None:
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")


def _central_difference(f, arr: np.ndarray, eps: float) -> np.ndarray:
    """Central differences of scalar f with respect to every entry of arr."""
    grad = np.zeros_like(arr)
    flat = arr.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = f()
        flat[i] = orig - eps
        f_minus = f()
        flat[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise FloatingPointError(f"non-finite loss during perturbation at index {i}")
        gflat[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad


def gradient_check(layer, x, eps: float = 1e-5, rng=None) -> float:
    """Compare a layer's analytic gradients against central differences.

    The scalar objective is sum(output * R) for a fixed random projection
    R, which exercises every output element.  Returns the max relative
    error over the input and all trainable parameters; frozen layers
    contribute only their input gradient.
    """
    _check_eps(eps)
    if rng is None:
        rng = np.random.default_rng(0)
    x = np.array(x, dtype=np.float64)

    out, cache = layer.forward(x)
    projection = rng.standard_normal(out.shape)

    def objective() -> float:
        y, _ = layer.forward(x)
        return float(np.sum(y * projection))

    grad_in, grad_params = layer.backward(cache, projection)

    worst = relative_error(grad_in, _central_difference(objective, x, eps))
    for pname in layer.trainable_param_names():
        numeric = _central_difference(objective, layer.params[pname], eps)
        worst = max(worst, relative_error(grad_params[pname], numeric))
    return worst


def check_scalar_function(fn, arrays, eps: float = 1e-5) -> float:
    """Gradient-check ``fn(*arrays) -> (loss, grads)`` against central differences.

    ``grads`` must be a tuple aligned with ``arrays`` (entries may be None
    to skip an argument).  Returns the max relative error.
    """
    _check_eps(eps)
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    loss, grads = fn(*arrays)
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite loss at the evaluation point")
    if not isinstance(grads, tuple):
        grads = (grads,)

    worst = 0.0
    for arr, analytic in zip(arrays, grads):
        if analytic is None:
            continue
        numeric = _central_difference(lambda: float(fn(*arrays)[0]), arr, eps)
        worst = max(worst, relative_error(analytic, numeric))
    return worst
