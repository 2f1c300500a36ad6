"""Parameter containers and the handful of layers the models need."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from mqa.numcore import ops
from mqa.numcore.tensor import Tensor


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Module:
    """Holds named parameters and child modules in insertion order."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._children: dict[str, Module] = {}

    def add_param(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def add_module(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(prefix + cname + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        unexpected = set(state) - set(own)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in own.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise ValueError(f"{name}: expected shape {p.shape}, got {value.shape}")
            p.data = value.copy()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


class Dense(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, activation: str | None = "relu"):
        super().__init__()
        self.weight = self.add_param("weight", glorot_uniform(rng, (n_in, n_out), n_in, n_out))
        self.bias = self.add_param("bias", np.zeros(n_out))
        self.activation = activation

    def __call__(self, x) -> Tensor:
        y = ops.linear(x, self.weight, self.bias)
        if self.activation == "relu":
            return ops.relu(y)
        if self.activation == "sigmoid":
            return ops.sigmoid(y)
        return y


class Conv1d(Module):
    """Valid 1-D convolution over time followed by an optional ReLU."""

    def __init__(self, n_in: int, channels: int, kernel: int, rng: np.random.Generator, stride: int = 1,
                 activation: str | None = "relu"):
        super().__init__()
        self.kernel_size = kernel
        self.stride = stride
        self.kernels = self.add_param(
            "kernels", glorot_uniform(rng, (channels, kernel, n_in), kernel * n_in, kernel * channels)
        )
        self.bias = self.add_param("bias", np.zeros(channels))
        self.activation = activation

    def __call__(self, x) -> Tensor:
        y = ops.add(ops.conv1d(x, self.kernels, self.stride), self.bias)
        return ops.relu(y) if self.activation == "relu" else y


class LayerNorm(Module):
    def __init__(self, n: int):
        super().__init__()
        self.gain = self.add_param("gain", np.ones(n))
        self.bias = self.add_param("bias", np.zeros(n))

    def __call__(self, x) -> Tensor:
        return ops.layer_norm(x, self.gain, self.bias)
