"""Module and layer plumbing on top of the tensor primitives.

Modules own Parameters (leaf tensors with requires_grad) and buffers (plain
numpy arrays: batch-norm running statistics and counters). Construction is
fully deterministic given the numpy Generator passed in, which is what makes
whole-model builds reproducible from a single seed.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .tensor import Tensor, default_dtype


class Parameter(Tensor):
    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)


class Module:
    def __init__(self):
        self._parameters: dict[str, Parameter] = {}
        self._modules: dict[str, Module] = {}
        self._buffers: dict[str, np.ndarray] = {}
        self.training = True

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self.__dict__.setdefault("_parameters", {})[name] = value
        elif isinstance(value, Module):
            self.__dict__.setdefault("_modules", {})[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, array: np.ndarray):
        self._buffers[name] = array
        object.__setattr__(self, name, array)

    def named_parameters(self, prefix: str = ""):
        for name, p in self._parameters.items():
            yield (prefix + name, p)
        for name, m in self._modules.items():
            yield from m.named_parameters(prefix + name + ".")

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def named_buffers(self, prefix: str = ""):
        for name, b in self._buffers.items():
            yield (prefix + name, b)
        for name, m in self._modules.items():
            yield from m.named_buffers(prefix + name + ".")

    def named_modules(self, prefix: str = ""):
        yield (prefix.rstrip("."), self)
        for name, m in self._modules.items():
            yield from m.named_modules(prefix + name + ".")

    def train(self, mode: bool = True):
        for _, m in self.named_modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def param_count(self) -> int:
        return int(np.sum([p.size for p in self.parameters()], dtype=np.int64, initial=0))

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):  # pragma: no cover
        raise NotImplementedError


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._list: list[Module] = []
        for m in modules:
            self.append(m)

    def append(self, module: Module):
        setattr(self, str(len(self._list)), module)
        self._list.append(module)

    def __iter__(self):
        return iter(self._list)

    def __len__(self):
        return len(self._list)

    def __getitem__(self, i):
        return self._list[i]


class Identity(Module):
    def forward(self, x):
        return x


def normal_init(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    return (rng.standard_normal(shape) * std).astype(default_dtype())


class Linear(Module):
    """y = x @ W (+ b) on trailing-axis features; W stored (in, out)."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, bias: bool = True, std: float | None = None):
        super().__init__()
        if std is None:
            std = 1.0 / np.sqrt(c_in)
        self.weight = Parameter(normal_init(rng, (c_in, c_out), std))
        self.bias = Parameter(np.zeros(c_out, dtype=default_dtype())) if bias else None

    def forward(self, x):
        y = ops.matmul(x, self.weight)
        if self.bias is not None:
            y = ops.add(y, self.bias)
        return y


class Conv2d(Module):
    def __init__(
        self,
        c_in: int,
        c_out: int,
        k: int,
        rng: np.random.Generator,
        padding: int = 0,
        stride: int = 1,
        bias: bool = True,
        std: float | None = None,
    ):
        super().__init__()
        if std is None:
            std = np.sqrt(2.0 / (c_in * k * k))
        self.weight = Parameter(normal_init(rng, (c_out, c_in, k, k), std))
        self.bias = Parameter(np.zeros(c_out, dtype=default_dtype())) if bias else None
        self.stride = stride
        self.padding = padding

    def forward(self, x):
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class DepthwiseConv2d(Module):
    def __init__(self, channels: int, k: int, rng: np.random.Generator, padding: int = 0, bias: bool = False):
        super().__init__()
        std = np.sqrt(2.0 / (k * k))
        self.weight = Parameter(normal_init(rng, (channels, 1, k, k), std))
        self.bias = Parameter(np.zeros(channels, dtype=default_dtype())) if bias else None
        self.padding = padding

    def forward(self, x):
        return ops.depthwise_conv2d(x, self.weight, self.bias, padding=self.padding)


class LayerNorm(Module):
    """Per-element affine layer norm along one axis (channels, by default last)."""

    def __init__(self, channels: int, axis: int = -1):
        super().__init__()
        self.gamma = Parameter(np.ones(channels, dtype=default_dtype()))
        self.beta = Parameter(np.zeros(channels, dtype=default_dtype()))
        self.axis = axis

    def forward(self, x):
        return ops.layer_norm(x, self.gamma, self.beta, axis=self.axis)


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.1):
        super().__init__()
        self.gamma = Parameter(np.ones(channels, dtype=default_dtype()))
        self.beta = Parameter(np.zeros(channels, dtype=default_dtype()))
        self.momentum = momentum
        self.register_buffer("running_mean", np.zeros(channels, dtype=default_dtype()))
        self.register_buffer("running_var", np.ones(channels, dtype=default_dtype()))
        self.register_buffer("num_batches", np.array(0, dtype=np.int64))

    def forward(self, x):
        return ops.batch_norm(
            x,
            self.gamma,
            self.beta,
            self.running_mean,
            self.running_var,
            training=self.training,
            counter=self.num_batches,
            momentum=self.momentum,
        )

    def mark_populated(self):
        """Declare the identity running stats usable (zero mean, unit variance)."""
        if int(self.num_batches) < 1:
            self.num_batches += 1


class Mlp(Module):
    """Two linears with GELU between, on trailing-axis features."""

    def __init__(self, channels: int, hidden_ratio: float, rng: np.random.Generator):
        super().__init__()
        hidden = int(round(channels * hidden_ratio))
        self.fc1 = Linear(channels, hidden, rng)
        self.fc2 = Linear(hidden, channels, rng)

    def forward(self, x):
        return self.fc2(ops.gelu(self.fc1(x)))
