"""Adam optimizer with an explicit, functional update step."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def adam_step(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray,
              t: int, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
    """One Adam update; returns (new_param, new_m, new_v).

    ``t`` is the 1-based step count used for bias correction. Raises on
    non-finite gradients so training failures surface at the step that
    produced them.
    """
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite gradient in adam_step")
    b1, b2 = betas
    m = b1 * m + (1.0 - b1) * grad
    v = b2 * v + (1.0 - b2) * (grad * grad)
    m_hat = m / (1.0 - b1 ** t)
    v_hat = v / (1.0 - b2 ** t)
    param = param - lr * m_hat / (np.sqrt(v_hat) + eps)
    return param, m, v


class Adam:
    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params: list[Tensor] = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            p.data, self.m[i], self.v[i] = adam_step(
                p.data, p.grad, self.m[i], self.v[i], self.t,
                self.lr, self.betas, self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None
