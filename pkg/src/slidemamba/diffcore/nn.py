"""Layer containers built on the tensor tape: Linear, MLP, BatchNorm, Dropout.

Weights are Xavier-uniform, biases zero, batchnorm scale/shift one/zero.
Every module yields its trainable tensors via ``named_params(prefix)`` with
dotted names; batchnorm additionally exposes running stats as buffers.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError, ShapeError
from .tensor import Tensor

MODES = ("train", "eval")


def check_mode(mode: str):
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")


def xavier_uniform(d_in: int, d_out: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (d_in + d_out))
    return rng.uniform(-limit, limit, size=(d_in, d_out))


class Linear:
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator):
        self.w = Tensor(xavier_uniform(d_in, d_out, rng), requires_grad=True)
        self.b = Tensor(np.zeros(d_out), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.w + self.b

    def named_params(self, prefix: str):
        yield f"{prefix}.w", self.w
        yield f"{prefix}.b", self.b

    def named_buffers(self, prefix: str):
        return ()


class MLP:
    """Affine -> ReLU per hidden layer, final layer affine only."""

    def __init__(self, dims: list[int], rng: np.random.Generator):
        if len(dims) < 2:
            raise ConfigError("MLP needs at least input and output dims")
        self.weights = []
        self.biases = []
        for d_in, d_out in zip(dims[:-1], dims[1:]):
            self.weights.append(Tensor(xavier_uniform(d_in, d_out, rng), requires_grad=True))
            self.biases.append(Tensor(np.zeros(d_out), requires_grad=True))

    def __call__(self, x: Tensor) -> Tensor:
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if x.shape[-1] != w.shape[0]:
                raise ShapeError(
                    f"MLP layer {i} expects width {w.shape[0]}, got {x.shape[-1]}"
                )
            x = x @ w + b
            if i != last:
                x = x.relu()
        return x

    def named_params(self, prefix: str):
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            yield f"{prefix}.w{i}", w
            yield f"{prefix}.b{i}", b

    def named_buffers(self, prefix: str):
        return ()


class BatchNorm1d:
    """Per-column batchnorm with running-stat EMA (momentum 0.1).

    Train mode standardizes with batch mean and population variance and
    updates the running stats; eval mode uses the stored running stats.
    """

    def __init__(self, d: int, momentum: float = 0.1, eps: float = 1e-5):
        self.scale = Tensor(np.ones(d), requires_grad=True)
        self.shift = Tensor(np.zeros(d), requires_grad=True)
        self.running_mean = np.zeros(d)
        self.running_var = np.ones(d)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x: Tensor, mode: str) -> Tensor:
        check_mode(mode)
        if x.ndim != 2:
            raise ShapeError(f"batchnorm expects n x d input, got {x.shape}")
        if x.shape[0] == 0:
            raise ShapeError("batchnorm on an empty batch")
        if mode == "train":
            mean = x.mean(axis=0, keepdims=True)
            centered = x - mean
            var = (centered * centered).mean(axis=0, keepdims=True)
            xhat = centered / (var + self.eps).sqrt()
            m = self.momentum
            self.running_mean = (1 - m) * self.running_mean + m * mean.data.reshape(-1)
            self.running_var = (1 - m) * self.running_var + m * var.data.reshape(-1)
        else:
            xhat = (x - self.running_mean) / np.sqrt(self.running_var + self.eps)
        return xhat * self.scale + self.shift

    def named_params(self, prefix: str):
        yield f"{prefix}.scale", self.scale
        yield f"{prefix}.shift", self.shift

    def named_buffers(self, prefix: str):
        # (name, owner, attribute) so loaders can setattr fresh arrays
        yield f"{prefix}.running_mean", self, "running_mean"
        yield f"{prefix}.running_var", self, "running_var"


class Dropout:
    """Inverted dropout; identity in eval mode or at rate 0."""

    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    def __call__(self, x: Tensor, mode: str, rng: np.random.Generator) -> Tensor:
        check_mode(mode)
        if mode == "eval" or self.rate == 0.0:
            return x
        keep = 1.0 - self.rate
        mask = (rng.random(x.shape) >= self.rate) / keep
        return x * Tensor(mask)
