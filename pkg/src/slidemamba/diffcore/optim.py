"""Adam with bias correction over a flat dict of named parameters."""

from __future__ import annotations

import numpy as np

from ..errors import NumericError, ShapeError
from .tensor import Tensor


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        """Apply one bias-corrected update in place; missing grads count as zero."""
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            elif not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter '{name}'")
            if g.shape != p.data.shape:
                raise ShapeError(f"gradient shape {g.shape} != parameter shape "
                                 f"{p.data.shape} for '{name}'")
            m = self.m[name] = b1 * self.m[name] + (1 - b1) * g
            v = self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            m_hat = m / (1 - b1 ** t)
            v_hat = v / (1 - b2 ** t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self) -> dict:
        return {
            "step": self.step_count,
            "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
            "m": {k: v.reshape(-1).tolist() for k, v in self.m.items()},
            "v": {k: v.reshape(-1).tolist() for k, v in self.v.items()},
        }

    def load_state_dict(self, state: dict):
        self.step_count = int(state["step"])
        self.lr = float(state["lr"])
        self.beta1 = float(state["beta1"])
        self.beta2 = float(state["beta2"])
        self.eps = float(state["eps"])
        for key, dest in (("m", self.m), ("v", self.v)):
            for name, values in state[key].items():
                if name not in dest:
                    raise ShapeError(f"optimizer state for unknown parameter '{name}'")
                dest[name] = np.asarray(values, dtype=np.float64).reshape(dest[name].shape)
