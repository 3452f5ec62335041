"""Parameter containers and stateful layers composing the primitive operators.

A layer owns named :class:`Param` objects, caches what its backward pass needs
during ``forward``, accumulates parameter gradients in ``backward``, and
returns the gradient w.r.t. its input. Initialization is a pure function of
(seed, parameter name) via the counter-based RNG, so construction order does
not matter.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .rng import Stream


class Param:
    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)

    def __repr__(self):
        return f"Param({self.name}, shape={self.value.shape})"


def init_weight(seed: int, name: str, shape, fan_in: int, dtype) -> np.ndarray:
    """Fan-in-scaled uniform init: U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    bound = 1.0 / np.sqrt(fan_in)
    return Stream(seed, name).uniform(shape, -bound, bound, dtype=dtype)


class Module:
    """Base: composite modules list their children; leaves override params()."""

    def children(self):
        return []

    def params(self):
        out = []
        for child in self.children():
            out.extend(child.params())
        return out

    def state_tensors(self):
        """Named non-parameter state (batch-norm running stats)."""
        out = {}
        for child in self.children():
            out.update(child.state_tensors())
        return out

    def zero_grad(self):
        for p in self.params():
            p.grad[...] = 0.0

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, grad_out):
        raise NotImplementedError


class Conv2d(Module):
    def __init__(self, name: str, spec: ops.ConvSpec, seed: int,
                 bias: bool = True, dtype=np.float32):
        self.spec = spec
        kh, kw = spec.kernel
        fan_in = (spec.in_channels // spec.groups) * kh * kw
        self.weight = Param(f"{name}.weight", init_weight(
            seed, f"{name}.weight",
            (spec.out_channels, spec.in_channels // spec.groups, kh, kw),
            fan_in, dtype))
        self.bias = Param(f"{name}.bias",
                          np.zeros(spec.out_channels, dtype=dtype)) if bias else None
        self._cache = None

    def params(self):
        return [self.weight] + ([self.bias] if self.bias else [])

    def forward(self, x, train=False):
        out, self._cache = ops.conv2d_forward(
            x, self.weight.value, self.bias.value if self.bias else None, self.spec)
        return out

    def backward(self, grad_out):
        gx, gw, gb = ops.conv2d_backward(grad_out, self._cache)
        self.weight.grad += gw
        if self.bias is not None:
            self.bias.grad += gb
        return gx


class BatchNorm2d(Module):
    def __init__(self, name: str, channels: int, dtype=np.float32):
        self.name = name
        self.gamma = Param(f"{name}.gamma", np.ones(channels, dtype=dtype))
        self.beta = Param(f"{name}.beta", np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=np.float64)
        self.running_var = np.ones(channels, dtype=np.float64)
        self._cache = None

    def params(self):
        return [self.gamma, self.beta]

    def state_tensors(self):
        return {f"{self.name}.running_mean": self.running_mean,
                f"{self.name}.running_var": self.running_var}

    def forward(self, x, train=False):
        out, self._cache = ops.batchnorm_forward(
            x, self.gamma.value, self.beta.value,
            self.running_mean, self.running_var, train)
        return out

    def backward(self, grad_out):
        gx, ggamma, gbeta = ops.batchnorm_backward(grad_out, self._cache)
        self.gamma.grad += ggamma
        self.beta.grad += gbeta
        return gx


class Linear(Module):
    def __init__(self, name: str, in_features: int, out_features: int, seed: int,
                 dtype=np.float32):
        self.weight = Param(f"{name}.weight", init_weight(
            seed, f"{name}.weight", (out_features, in_features), in_features, dtype))
        self.bias = Param(f"{name}.bias", np.zeros(out_features, dtype=dtype))
        self._cache = None

    def params(self):
        return [self.weight, self.bias]

    def forward(self, x, train=False):
        out, self._cache = ops.fully_connected(x, self.weight.value, self.bias.value)
        return out

    def backward(self, grad_out):
        gx, gw, gb = ops.fully_connected_backward(grad_out, self._cache)
        self.weight.grad += gw
        self.bias.grad += gb
        return gx


class ReLU(Module):
    def forward(self, x, train=False):
        out, self._cache = ops.relu(x)
        return out

    def backward(self, grad_out):
        return ops.relu_backward(grad_out, self._cache)


class Sigmoid(Module):
    def forward(self, x, train=False):
        out, self._cache = ops.sigmoid(x)
        return out

    def backward(self, grad_out):
        return ops.sigmoid_backward(grad_out, self._cache)


class Sequential(Module):
    def __init__(self, *layers):
        self.layers = list(layers)

    def children(self):
        return self.layers

    def forward(self, x, train=False):
        for layer in self.layers:
            x = layer.forward(x, train=train)
        return x

    def backward(self, grad_out):
        for layer in reversed(self.layers):
            grad_out = layer.backward(grad_out)
        return grad_out
