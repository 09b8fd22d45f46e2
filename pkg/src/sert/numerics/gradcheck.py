"""Central finite-difference verification of reverse-mode gradients.

The relative error reported per parameter is
``|analytic - numeric| / max(1, |analytic|, |numeric|)`` so near-zero
gradients are judged on an absolute scale instead of blowing up.
"""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .tensor import Tape, Tensor, no_tape, zero_grads

DEFAULT_FD_STEP = 1e-5


def numeric_gradient(loss_fn: Callable[[], Tensor], param: Tensor, step: float = DEFAULT_FD_STEP) -> np.ndarray:
    """Central-difference gradient of ``loss_fn()`` w.r.t. every entry of ``param``.

    ``loss_fn`` must be a pure function of the current parameter values; it is
    re-evaluated 2*param.size times with entries perturbed in place.
    """
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    gflat = grad.reshape(-1)
    with no_tape():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = loss_fn().item()
            flat[i] = orig - step
            lo = loss_fn().item()
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_gradients(
    loss_fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    step: float = DEFAULT_FD_STEP,
) -> dict[str, float]:
    """Compare tape gradients of ``loss_fn()`` against central differences.

    Returns the max relative error per parameter name.
    """
    zero_grads(params)
    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    analytic = {}
    for name, p in params.items():
        if p.grad is None:
            analytic[name] = np.zeros_like(p.data)
        else:
            analytic[name] = p.grad.copy()
    errors = {}
    for name, p in params.items():
        numeric = numeric_gradient(loss_fn, p, step=step)
        errors[name] = relative_error(analytic[name], numeric)
    return errors
