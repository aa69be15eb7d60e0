"""Layer objects that own parameters and wrap the functional primitives."""

from __future__ import annotations

import math
from typing import Iterator, Optional

import numpy as np

from . import functional as F
from .errors import ContractError
from .tensor import Tensor, parameter


class Module:
    """Base class: parameters, buffers, train/eval switching."""

    training = True

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)

    def children(self) -> Iterator["Module"]:
        return iter(())

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
        for i, child in enumerate(self.children()):
            yield from child.named_parameters(f"{prefix}{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for i, child in enumerate(self.children()):
            yield from child.named_buffers(f"{prefix}{i}.")

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for child in self.children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({name: b.copy() for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        targets = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        expected = set(targets) | set(buffers)
        if set(state) != expected:
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            raise ContractError(f"state mismatch: missing {missing}, unexpected {extra}")
        for name, p in targets.items():
            if state[name].shape != p.shape:
                raise ContractError(f"{name}: shape {state[name].shape} != {p.shape}")
            p.data = state[name].astype(p.dtype, copy=True)
        for name, b in buffers.items():
            b[...] = state[name]


class Sequential(Module):
    def __init__(self, *layers: Module):
        self.layers = list(layers)

    def children(self) -> Iterator[Module]:
        return iter(self.layers)

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x

    def __len__(self) -> int:
        return len(self.layers)

    def __getitem__(self, i: int) -> Module:
        return self.layers[i]


def normal_init(rng: np.random.Generator, shape: tuple, std: float = 0.02, mean: float = 0.0, dtype=np.float32):
    return rng.normal(mean, std, size=shape).astype(dtype)


def fan_in_uniform(rng: np.random.Generator, shape: tuple, fan_in: int, dtype=np.float32):
    """He-style uniform: U(-b, b) with b = sqrt(6 / fan_in)."""
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def _init_weight(rng, shape, fan_in, init, dtype):
    if init == "normal":
        return normal_init(rng, shape, dtype=dtype)
    if init == "fan_in":
        return fan_in_uniform(rng, shape, fan_in, dtype=dtype)
    raise ContractError(f"unknown init scheme {init!r}")


class Conv2d(Module):
    def __init__(self, in_ch, out_ch, kernel, stride=1, padding=0, bias=True, *, rng, init="fan_in", dtype=np.float32):
        fan_in = in_ch * kernel * kernel
        self.weight = parameter(_init_weight(rng, (out_ch, in_ch, kernel, kernel), fan_in, init, dtype))
        self.bias = parameter(np.zeros(out_ch, dtype=dtype)) if bias else None
        self.stride, self.padding = stride, padding

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose2d(Module):
    def __init__(self, in_ch, out_ch, kernel, stride=1, padding=0, bias=True, *, rng, init="normal", dtype=np.float32):
        fan_in = in_ch * kernel * kernel
        self.weight = parameter(_init_weight(rng, (in_ch, out_ch, kernel, kernel), fan_in, init, dtype))
        self.bias = parameter(np.zeros(out_ch, dtype=dtype)) if bias else None
        self.stride, self.padding = stride, padding

    def forward(self, x: Tensor) -> Tensor:
        return F.conv_transpose2d(x, self.weight, self.bias, self.stride, self.padding)


class Dense(Module):
    def __init__(self, n_in, n_out, *, rng, init="fan_in", dtype=np.float32):
        self.weight = parameter(_init_weight(rng, (n_in, n_out), n_in, init, dtype))
        self.bias = parameter(np.zeros(n_out, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return F.dense(x, self.weight, self.bias)


class BatchNorm2d(Module):
    def __init__(self, channels, *, rng=None, eps=1e-5, momentum=0.1, dtype=np.float32):
        # DCGAN convention: gamma ~ N(1, 0.02)
        gamma = np.ones(channels, dtype=dtype) if rng is None else normal_init(rng, (channels,), mean=1.0, dtype=dtype)
        self.gamma = parameter(gamma)
        self.beta = parameter(np.zeros(channels, dtype=dtype))
        self.stats = F.RunningStats.fresh(channels, dtype=dtype, momentum=momentum)
        self.eps = eps

    def named_buffers(self, prefix: str = ""):
        yield prefix + "running_mean", self.stats.mean
        yield prefix + "running_var", self.stats.var

    def forward(self, x: Tensor) -> Tensor:
        mode = "train" if self.training else "eval"
        return F.batchnorm2d(x, self.gamma, self.beta, mode, self.stats, self.eps)


class Activation(Module):
    def __init__(self, kind: str, slope: float = 0.2):
        F.activation(Tensor(np.zeros(1)), kind, slope)  # validates the name early
        self.kind, self.slope = kind, slope

    def forward(self, x: Tensor) -> Tensor:
        return F.activation(x, self.kind, self.slope)


class MaxPool2d(Module):
    def __init__(self, window: int = 2, stride: Optional[int] = None):
        self.window, self.stride = window, stride

    def forward(self, x: Tensor) -> Tensor:
        return F.maxpool2d(x, self.window, self.stride)


class Dropout(Module):
    """Dropout whose masks come from a generator the trainer can reseed."""

    def __init__(self, rate: float, seed: int = 0):
        if not 0.0 <= rate < 1.0:
            F.dropout(Tensor(np.zeros(1)), rate)  # raises ConfigurationError
        self.rate = rate
        self.rng = np.random.default_rng(seed)

    def forward(self, x: Tensor) -> Tensor:
        return F.dropout(x, self.rate, "train" if self.training else "eval", self.rng)


class Flatten(Module):
    def forward(self, x: Tensor) -> Tensor:
        return x.flatten()


class Reshape(Module):
    def __init__(self, *shape: int):
        self.shape = shape

    def forward(self, x: Tensor) -> Tensor:
        return x.reshape(x.shape[0], *self.shape)
