"""Gradient-step rules for named parameter dicts.

Both optimizers mutate ``params`` in place and keep per-name state keyed by
the parameter name, so the same instance must always be stepped with the
same parameter set.

MomentumSGD:  v <- momentum * v + grad;  p <- p - lr * v
Adam (bias-corrected, eps = 1e-8):
    m <- b1 * m + (1 - b1) * grad
    v <- b2 * v + (1 - b2) * grad^2
    p <- p - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
"""

from __future__ import annotations

import numpy as np


class MomentumSGD:
    def __init__(self, lr: float, momentum: float = 0.9):
        if lr < 0:
            raise ValueError("lr must be >= 0")
        self.lr = lr
        self.momentum = momentum
        self._velocity: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for name, p in params.items():
            g = grads[name]
            v = self._velocity.get(name)
            if v is None:
                v = np.zeros_like(p)
            v = self.momentum * v + g
            self._velocity[name] = v
            p -= self.lr * v


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr < 0:
            raise ValueError("lr must be >= 0")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self._t += 1
        b1t = 1.0 - self.beta1 ** self._t
        b2t = 1.0 - self.beta2 ** self._t
        for name, p in params.items():
            g = grads[name]
            m = self._m.get(name)
            v = self._v.get(name)
            if m is None:
                m = np.zeros_like(p)
                v = np.zeros_like(p)
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * (g * g)
            self._m[name] = m
            self._v[name] = v
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)
