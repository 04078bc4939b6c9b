"""Adam updates for per-attribute parameter arrays."""

from __future__ import annotations

import numpy as np


class Adam:
    """Adaptive-moment estimation with bias correction.

    Moments are kept in float64; `update` returns the new parameter value and
    leaves dtype handling to the caller.
    """

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-15):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._m = {}
        self._v = {}
        self._t = {}

    def update(self, key, value: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
        value = np.asarray(value, dtype=np.float64)
        grad = np.asarray(grad, dtype=np.float64)
        if key not in self._m:
            self._m[key] = np.zeros_like(value)
            self._v[key] = np.zeros_like(value)
            self._t[key] = 0
        self._t[key] += 1
        t = self._t[key]
        m = self._m[key] = self.beta1 * self._m[key] + (1 - self.beta1) * grad
        v = self._v[key] = self.beta2 * self._v[key] + (1 - self.beta2) * grad ** 2
        m_hat = m / (1 - self.beta1 ** t)
        v_hat = v / (1 - self.beta2 ** t)
        return value - lr * m_hat / (np.sqrt(v_hat) + self.eps)
