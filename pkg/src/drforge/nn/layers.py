"""Parameterised layers and a small module system."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Parameters are discovered from attributes in definition order."""

    training = True

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, v in enumerate(value):
                    if isinstance(v, Module):
                        yield from v.named_parameters(f"{full}.{i}.")

    def parameters(self) -> dict:
        return dict(self.named_parameters())

    def zero_grad(self):
        for p in self.parameters().values():
            p.grad = None

    def state_dict(self) -> dict:
        return {k: v.data.copy() for k, v in self.parameters().items()}

    def load_state_dict(self, state: dict):
        params = self.parameters()
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            from ..errors import ShapeMismatch

            raise ShapeMismatch(f"state mismatch: missing {sorted(missing)[:3]}, unexpected {sorted(extra)[:3]}")
        for k, p in params.items():
            if state[k].shape != p.shape:
                from ..errors import ShapeMismatch

                raise ShapeMismatch(f"{k}: checkpoint shape {state[k].shape} vs model {p.shape}")
            p.data = np.array(state[k], dtype=p.dtype)

    def astype(self, dtype):
        for p in self.parameters().values():
            p.data = p.data.astype(dtype)
        return self

    def n_params(self) -> int:
        return sum(p.data.size for p in self.parameters().values())

    def __call__(self, *args, **kw):
        return self.forward(*args, **kw)


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


def _param(a) -> Tensor:
    return Tensor(np.asarray(a, dtype=np.float32), requires_grad=True)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = _param(kaiming_uniform(rng, (n_out, n_in), n_in))
        self.bias = _param(np.zeros(n_out)) if bias else None

    def forward(self, x):
        return T.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, c_in, c_out, k, rng, stride=1, padding=None, bias=False):
        self.weight = _param(kaiming_uniform(rng, (c_out, c_in, k, k), c_in * k * k))
        self.bias = _param(np.zeros(c_out)) if bias else None
        self._stride = stride
        self._padding = k // 2 if padding is None else padding

    def forward(self, x):
        return T.conv2d(x, self.weight, self.bias, self._stride, self._padding)


class GroupNorm(Module):
    def __init__(self, channels: int, groups: int = 8):
        self._groups = math.gcd(groups, channels)
        self.weight = _param(np.ones(channels))
        self.bias = _param(np.zeros(channels))

    def forward(self, x):
        return T.group_norm(x, self._groups, self.weight, self.bias)


class ResidualBlock(Module):
    """conv-norm-relu-conv-norm plus a (projected) shortcut, then relu."""

    def __init__(self, c_in, c_out, stride, rng, groups=8):
        self.conv1 = Conv2d(c_in, c_out, 3, rng, stride=stride)
        self.norm1 = GroupNorm(c_out, groups)
        self.conv2 = Conv2d(c_out, c_out, 3, rng)
        self.norm2 = GroupNorm(c_out, groups)
        if stride != 1 or c_in != c_out:
            self.proj = Conv2d(c_in, c_out, 1, rng, stride=stride, padding=0)
            self.proj_norm = GroupNorm(c_out, groups)
        else:
            self.proj = None

    def forward(self, x):
        h = T.relu(self.norm1(self.conv1(x)))
        h = self.norm2(self.conv2(h))
        skip = self.proj_norm(self.proj(x)) if self.proj is not None else x
        return T.relu(T.add(h, skip))


class MLP(Module):
    def __init__(self, sizes, rng):
        self.layers = [Linear(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]

    def forward(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = T.relu(x)
        return x
