"""Adam with bias correction, shared by both training stages."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


@dataclass
class AdamMoments:
    m: np.ndarray
    v: np.ndarray
    t: np.ndarray  # step counter, per element

    @classmethod
    def zeros_like(cls, param: np.ndarray) -> AdamMoments:
        return cls(np.zeros_like(param, dtype=np.float64), np.zeros_like(param, dtype=np.float64),
                   np.zeros(np.shape(param), dtype=np.int64))

    def copy(self) -> AdamMoments:
        return AdamMoments(self.m.copy(), self.v.copy(), self.t.copy())


def adam_update(param, grad, state: AdamMoments, lr: float, mask=None,
                beta1: float = BETA1, beta2: float = BETA2, eps: float = EPS):
    """One Adam step, returning new ``(param, state)`` without mutating inputs.

    Entries where ``mask`` is False keep their value, moments and step count.
    """
    param = np.asarray(param, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != param.shape or state.m.shape != param.shape:
        raise ValueError(f"shape mismatch: param {param.shape}, grad {grad.shape}, state {state.m.shape}")
    if mask is None:
        mask = np.ones(param.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)

    t = np.where(mask, state.t + 1, state.t)
    m = np.where(mask, beta1 * state.m + (1.0 - beta1) * grad, state.m)
    v = np.where(mask, beta2 * state.v + (1.0 - beta2) * grad * grad, state.v)
    tt = np.maximum(t, 1)
    m_hat = m / (1.0 - beta1**tt)
    v_hat = v / (1.0 - beta2**tt)
    new_param = np.where(mask, param - lr * m_hat / (np.sqrt(v_hat) + eps), param)
    return new_param, AdamMoments(m, v, t)
