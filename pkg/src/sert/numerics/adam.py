"""Adam optimizer with bias correction, operating on named parameter tensors."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ..errors import DimensionError, NumericError
from .tensor import Tensor


@dataclass
class AdamState:
    """First/second moment buffers plus hyperparameters.

    ``m`` and ``v`` are keyed by parameter name and created lazily on the
    first step so a fresh state can be paired with any parameter set.
    """

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float | None = None,
) -> AdamState:
    """Apply one bias-corrected Adam update in place.

    All gradients are validated before any buffer is touched, so a NaN
    gradient leaves both parameters and state exactly as they were.
    ``lr`` overrides ``state.lr`` for this step only (schedules).
    """
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            raise DimensionError(f"missing gradient for parameter '{name}'")
        if g.shape != p.data.shape:
            raise DimensionError(f"gradient shape {g.shape} does not match parameter '{name}' {p.data.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter '{name}'")

    rate = state.lr if lr is None else lr
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = grads[name]
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        p.data -= rate * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return state
