"""Adaptive-moment gradient descent over named parameter tensors."""

from __future__ import annotations

import numpy as np


class Adam:
    """Adam with bias correction; frozen name prefixes receive no updates.

    A parameter is frozen when its name starts with any entry of ``freeze``;
    its gradient may still be computed, but ``step`` never touches it.
    """

    def __init__(self, params: dict, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, freeze=()):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        freeze = tuple(freeze)
        self._all = dict(params)
        self._trainable = {name: p for name, p in self._all.items()
                           if not any(name.startswith(prefix) for prefix in freeze)}
        self._m = {name: np.zeros_like(p.data) for name, p in self._trainable.items()}
        self._v = {name: np.zeros_like(p.data) for name, p in self._trainable.items()}
        self._t = 0

    @property
    def trainable_names(self) -> list:
        return list(self._trainable)

    def zero_grad(self):
        for p in self._all.values():
            p.grad = None

    def step(self):
        self._t += 1
        correct1 = 1.0 - self.beta1 ** self._t
        correct2 = 1.0 - self.beta2 ** self._t
        for name, p in self._trainable.items():
            g = p.grad
            if g is None:
                continue
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            m_hat = m / correct1
            v_hat = v / correct2
            p.data -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype)
