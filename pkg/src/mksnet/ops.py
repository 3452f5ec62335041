"""Primitive NCHW operators, each as a forward function plus explicit backward.

Forward functions return ``(output, cache)``; the matching ``*_backward``
consumes ``(grad_output, cache)`` and returns gradients in the same order as
the forward inputs. All operators accept float32 or float64 and preserve the
input dtype. Shapes are validated eagerly with descriptive errors.

A process-local multiply-accumulate counter can be armed with
:func:`count_macs`; conv2d and fully_connected report the MACs they actually
perform, which the closed-form FLOPs counter is checked against.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np

from . import backend

BN_EPS = 1e-5
BN_MOMENTUM = 0.1

_mac_counter: list = []


@contextlib.contextmanager
def count_macs():
    """Context manager yielding a one-element list accumulating forward MACs."""
    box = [0]
    _mac_counter.append(box)
    try:
        yield box
    finally:
        _mac_counter.pop()


def _record_macs(n: int):
    for box in _mac_counter:
        box[0] += n


def check_4d(x, name="input"):
    if x.ndim != 4:
        raise ValueError(f"{name} must be 4-D NCHW, got shape {x.shape}")
    if min(x.shape) < 1:
        raise ValueError(f"{name} has a zero-sized dimension: {x.shape}")


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: tuple
    stride: int = 1
    dilation: int = 1
    padding: int = 0
    groups: int = 1

    def __post_init__(self):
        kh, kw = self.kernel
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ValueError(
                f"channels ({self.in_channels}->{self.out_channels}) not divisible "
                f"by groups={self.groups}")
        if min(self.stride, self.dilation, kh, kw) < 1 or self.padding < 0:
            raise ValueError(f"invalid conv spec {self}")

    def out_size(self, h: int, w: int) -> tuple:
        kh, kw = self.kernel
        num_h = h + 2 * self.padding - self.dilation * (kh - 1) - 1
        num_w = w + 2 * self.padding - self.dilation * (kw - 1) - 1
        if num_h < 0 or num_w < 0 or num_h % self.stride or num_w % self.stride:
            raise ValueError(
                f"conv output size not a positive integer for input {h}x{w} "
                f"with {self}")
        return num_h // self.stride + 1, num_w // self.stride + 1

    def macs(self, h: int, w: int) -> int:
        ho, wo = self.out_size(h, w)
        kh, kw = self.kernel
        return (self.in_channels // self.groups) * kh * kw \
            * self.out_channels * ho * wo


def conv2d_forward(x, weight, bias, spec: ConvSpec):
    check_4d(x)
    if x.shape[1] != spec.in_channels:
        raise ValueError(f"expected {spec.in_channels} input channels, got {x.shape[1]}")
    kh, kw = spec.kernel
    if weight.shape != (spec.out_channels, spec.in_channels // spec.groups, kh, kw):
        raise ValueError(f"weight shape {weight.shape} does not match {spec}")
    if bias is not None and bias.shape != (spec.out_channels,):
        raise ValueError(f"bias shape {bias.shape}, expected ({spec.out_channels},)")
    b, _, h, w = x.shape
    ho, wo = spec.out_size(h, w)
    p = spec.padding
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    out = backend.conv2d_raw(xp, weight, spec.stride, spec.dilation, spec.groups, ho, wo)
    if bias is not None:
        out += bias[None, :, None, None]
    _record_macs(spec.macs(h, w) * b)
    cache = (xp, weight, bias is not None, spec, x.shape)
    return out, cache


def conv2d_backward(grad_out, cache):
    xp, weight, has_bias, spec, x_shape = cache
    ho, wo = spec.out_size(x_shape[2], x_shape[3])
    if grad_out.shape != (x_shape[0], spec.out_channels, ho, wo):
        raise ValueError(f"grad_out shape {grad_out.shape} does not match forward output")
    grad_out = np.ascontiguousarray(grad_out)
    p = spec.padding
    gxp = backend.conv2d_grad_input_raw(
        grad_out, weight, spec.stride, spec.dilation, spec.groups,
        xp.shape[2], xp.shape[3])
    gx = gxp[:, :, p:xp.shape[2] - p, p:xp.shape[3] - p] if p else gxp
    gw = backend.conv2d_grad_weight_raw(
        grad_out, xp, spec.stride, spec.dilation, spec.groups, *spec.kernel)
    gb = grad_out.sum(axis=(0, 2, 3)) if has_bias else None
    return np.ascontiguousarray(gx), gw, gb


def batchnorm_forward(x, gamma, beta, running_mean, running_var, train: bool,
                      eps: float = BN_EPS, momentum: float = BN_MOMENTUM):
    """Per-channel batch norm. In train mode the batch statistics normalize and
    the running stats are updated in place (biased variance in the normalizer,
    unbiased in the running average)."""
    check_4d(x)
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"batchnorm affine params must have shape ({c},)")
    if train:
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        n = x.shape[0] * x.shape[2] * x.shape[3]
        unbiased = var * (n / max(n - 1, 1))
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * unbiased
    else:
        mean, var = running_mean.astype(x.dtype), running_var.astype(x.dtype)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    return out, (xhat, inv_std, gamma, train)


def batchnorm_backward(grad_out, cache):
    xhat, inv_std, gamma, train = cache
    ggamma = (grad_out * xhat).sum(axis=(0, 2, 3))
    gbeta = grad_out.sum(axis=(0, 2, 3))
    gxhat = grad_out * gamma[None, :, None, None]
    if not train:
        return gxhat * inv_std[None, :, None, None], ggamma, gbeta
    n = grad_out.shape[0] * grad_out.shape[2] * grad_out.shape[3]
    mean_g = gxhat.mean(axis=(0, 2, 3))[None, :, None, None]
    mean_gx = (gxhat * xhat).mean(axis=(0, 2, 3))[None, :, None, None]
    gx = inv_std[None, :, None, None] * (gxhat - mean_g - xhat * mean_gx)
    return gx, ggamma, gbeta


def global_avg_pool(x):
    check_4d(x)
    return x.mean(axis=(2, 3)), x.shape


def global_avg_pool_backward(grad_out, x_shape):
    b, c, h, w = x_shape
    return np.broadcast_to(grad_out[:, :, None, None] / (h * w), x_shape).astype(
        grad_out.dtype).copy()


def global_max_pool(x):
    check_4d(x)
    flat = x.reshape(x.shape[0], x.shape[1], -1)
    idx = flat.argmax(axis=2)  # first occurrence on ties
    out = np.take_along_axis(flat, idx[:, :, None], axis=2)[:, :, 0]
    return out, (idx, x.shape)


def global_max_pool_backward(grad_out, cache):
    idx, x_shape = cache
    gflat = np.zeros((x_shape[0], x_shape[1], x_shape[2] * x_shape[3]),
                     dtype=grad_out.dtype)
    np.put_along_axis(gflat, idx[:, :, None], grad_out[:, :, None], axis=2)
    return gflat.reshape(x_shape)


def channel_mean(x):
    check_4d(x)
    return x.mean(axis=1, keepdims=True), x.shape


def channel_mean_backward(grad_out, x_shape):
    return np.broadcast_to(grad_out / x_shape[1], x_shape).astype(grad_out.dtype).copy()


def channel_max(x):
    check_4d(x)
    idx = x.argmax(axis=1)  # first occurrence on ties
    out = np.take_along_axis(x, idx[:, None], axis=1)
    return out, (idx, x.shape)


def channel_max_backward(grad_out, cache):
    idx, x_shape = cache
    gx = np.zeros(x_shape, dtype=grad_out.dtype)
    np.put_along_axis(gx, idx[:, None], grad_out, axis=1)
    return gx


def fully_connected(x, weight, bias):
    if x.ndim != 2:
        raise ValueError(f"fully_connected expects (B, C) input, got {x.shape}")
    c_out, c_in = weight.shape
    if x.shape[1] != c_in:
        raise ValueError(f"expected {c_in} input features, got {x.shape[1]}")
    out = x @ weight.T
    if bias is not None:
        out += bias
    _record_macs(x.shape[0] * c_in * c_out)
    return out, (x, weight, bias is not None)


def fully_connected_backward(grad_out, cache):
    x, weight, has_bias = cache
    gx = grad_out @ weight
    gw = grad_out.T @ x
    gb = grad_out.sum(axis=0) if has_bias else None
    return gx, gw, gb


def relu(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(grad_out, mask):
    return grad_out * mask


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out, out


def sigmoid_backward(grad_out, out):
    return grad_out * out * (1.0 - out)


def elemwise_mul_broadcast(a, b):
    """Elementwise product; b may broadcast against a along singleton axes."""
    try:
        out = a * b
    except ValueError:
        raise ValueError(f"shapes {a.shape} and {b.shape} do not broadcast")
    if out.shape != np.broadcast_shapes(a.shape, b.shape):
        raise ValueError(f"shapes {a.shape} and {b.shape} do not broadcast")
    return out, (a, b)


def _unbroadcast(grad, shape):
    """Sum grad down to `shape` over broadcast axes."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def elemwise_mul_broadcast_backward(grad_out, cache):
    a, b = cache
    return _unbroadcast(grad_out * b, a.shape), _unbroadcast(grad_out * a, b.shape)


def concat_channels(tensors):
    for t in tensors:
        check_4d(t)
    ref = tensors[0]
    for t in tensors[1:]:
        if t.shape[0] != ref.shape[0] or t.shape[2:] != ref.shape[2:]:
            raise ValueError("concat_channels requires matching B, H, W")
    widths = [t.shape[1] for t in tensors]
    return np.concatenate(tensors, axis=1), widths


def concat_channels_backward(grad_out, widths):
    splits = np.cumsum(widths)[:-1]
    return [np.ascontiguousarray(g) for g in np.split(grad_out, splits, axis=1)]
