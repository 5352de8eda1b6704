"""
Adam on dictionaries of numpy arrays, plus the relative-decrease stopping rule
"""
import math
from typing import Dict, Optional

import numpy as np


class AdamOptimizer:
    def __init__(self, lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive (got {lr})")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
        """Bias-corrected update, in place"""
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        step_size = self.lr / bc1

        for k in params:
            g = grads[k]
            if k not in self.m:
                self.m[k] = np.zeros_like(params[k])
                self.v[k] = np.zeros_like(params[k])

            self.m[k] *= self.beta1
            self.m[k] += (1.0 - self.beta1) * g
            self.v[k] *= self.beta2
            self.v[k] += (1.0 - self.beta2) * (g * g)

            denom = np.sqrt(self.v[k] * (1.0 / bc2)) + self.epsilon
            params[k] -= step_size * self.m[k] / denom


class StoppingMonitor:
    """
    Stops once the relative decrease per iteration stays below rel_tol for
    `patience` consecutive decreasing iterations. Increases neither count
    towards the window nor reset it.
    """

    def __init__(self, rel_tol: float, patience: int = 20):
        if rel_tol < 0:
            raise ValueError("rel_tol must be non-negative")
        self.rel_tol = rel_tol
        self.patience = max(int(patience), 1)
        self.previous: Optional[float] = None
        self.stalled = 0

    def update(self, value: float) -> bool:
        previous, self.previous = self.previous, value
        if previous is None or not math.isfinite(previous):
            return False
        if value > previous:
            return False
        scale = abs(previous) if previous != 0 else 1.0
        if (previous - value) / scale < self.rel_tol:
            self.stalled += 1
        else:
            self.stalled = 0
        return self.stalled >= self.patience
