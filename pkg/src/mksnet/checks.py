"""Registry of gradient-checkable units for the CLI and the acceptance suite.

Each entry builds a small double-precision instance at a randomized,
non-degenerate point and runs the central finite-difference check. Primitive
operators are held to 1e-6, composite modules to 1e-5.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .attention import CAModule, MKSBlock, SAModule
from .backbone import BackboneConfig, DetectionModel, PatchEmbed, StageConfig
from .gradcheck import GradcheckReport, check_fn, check_module, randomize_params
from .layers import BatchNorm2d, Conv2d, Linear, Module
from .rng import Stream
from .train import bce_loss

OP_TOL = 1e-6
MODULE_TOL = 1e-5


class _FnModule(Module):
    """Wraps a parameter-free (forward, backward) op pair."""

    def __init__(self, fwd, bwd):
        self._fwd, self._bwd = fwd, bwd

    def forward(self, x, train=False):
        out, self._cache = self._fwd(x)
        return out

    def backward(self, grad_out):
        return self._bwd(grad_out, self._cache)


class _ExtractHarness(Module):
    """sa_extract with its branch outputs concatenated to a single tensor."""

    def __init__(self, sa):
        self.sa = sa

    def children(self):
        return [self.sa]

    def forward(self, x, train=False):
        feats = self.sa.extract(x, train=train)
        out, self._widths = ops.concat_channels(feats)
        return out

    def backward(self, grad_out):
        return self.sa.extract_backward(
            ops.concat_channels_backward(grad_out, self._widths))


class _TransformHarness(Module):
    """sa_transform fed from packed branch features (B, S*C, H, W)."""

    def __init__(self, sa):
        self.sa = sa

    def children(self):
        return [self.sa]

    def forward(self, x, train=False):
        c = self.sa.channels
        feats = [x[:, i * c:(i + 1) * c] for i in range(len(self.sa.transforms))]
        _, t, self._widths = self.sa.transform(feats)
        return t

    def backward(self, grad_out):
        parts = ops.concat_channels_backward(grad_out, self._widths)
        g_feats = [tr.backward(g) for tr, g in zip(self.sa.transforms, parts)]
        return np.concatenate(g_feats, axis=1)


class _AttentionHarness(Module):
    def __init__(self, sa):
        self.sa = sa

    def children(self):
        return [self.sa]

    def forward(self, x, train=False):
        return self.sa.attention(x)

    def backward(self, grad_out):
        return self.sa.attention_backward(grad_out)


class _FuseHarness(Module):
    """sa_fuse on a packed input: [x | T blocks | sig] along channels."""

    def __init__(self, sa):
        self.sa = sa

    def children(self):
        return [self.sa]

    def forward(self, u, train=False):
        c = self.sa.channels
        s = len(self.sa.transforms)
        x, t, sig = u[:, :c], u[:, c:2 * c], u[:, 2 * c:2 * c + s]
        t_list = [t[:, i * (c // s):(i + 1) * (c // s)] for i in range(s)]
        return self.sa.fuse(x, t_list, sig)

    def backward(self, grad_out):
        gx, g_t_list, g_sig = self.sa.fuse_backward(grad_out)
        return np.concatenate([gx] + g_t_list + [g_sig], axis=1)


def _check(name, module, shape, tol, train=True, seed=3):
    randomize_params(module, seed=5)
    x = Stream(seed, name).uniform(shape, -1.0, 1.0)
    return check_module(name, module, x, tol=tol, train=train)


def _sa(channels=4, branches=2):
    return SAModule("sa", channels, branches, 7, seed=1, dtype=np.float64)


def _tiny_model():
    cfg = BackboneConfig(patch_kernel=2, patch_stride=2, variant="sa_ca",
                         stages=(StageConfig(1, 4, branches=2, reduction=2),))
    return DetectionModel(cfg, seed=1, dtype=np.float64)


def _check_bce():
    logits = Stream(9, "bce").uniform((2, 1, 3, 3), -2.0, 2.0)
    target = (Stream(10, "bce-t").uniform((2, 1, 3, 3)) > 0.5).astype(np.float64)

    def fn(z, t, grad_dir=None):
        loss, grad = bce_loss(z, t)
        if grad_dir is None:
            return np.float64(loss), None
        return np.float64(loss), [grad * grad_dir, None]

    return check_fn("bce_loss", fn, [logits, target], tol=OP_TOL)


def _broken():
    """Negative-control fixture: a conv whose backward is deliberately off."""
    conv = Conv2d("conv", ops.ConvSpec(2, 3, (3, 3), padding=1), seed=1,
                  dtype=np.float64)
    orig = conv.backward
    conv.backward = lambda g: orig(g) * 1.01
    return _check("_broken", conv, (1, 2, 5, 5), OP_TOL)


REGISTRY = {
    "conv2d": lambda: _check(
        "conv2d", Conv2d("conv", ops.ConvSpec(2, 4, (3, 3), dilation=2, padding=2),
                         seed=1, dtype=np.float64), (1, 2, 6, 6), OP_TOL),
    "conv2d_grouped": lambda: _check(
        "conv2d_grouped",
        Conv2d("conv", ops.ConvSpec(4, 4, (3, 3), padding=1, groups=4),
               seed=1, dtype=np.float64), (2, 4, 5, 5), OP_TOL),
    "conv2d_strided": lambda: _check(
        "conv2d_strided",
        Conv2d("conv", ops.ConvSpec(3, 4, (4, 4), stride=2, padding=1),
               seed=1, dtype=np.float64), (1, 3, 8, 8), OP_TOL),
    "batchnorm": lambda: _check(
        "batchnorm", BatchNorm2d("bn", 3, dtype=np.float64), (3, 3, 4, 4), OP_TOL),
    "batchnorm_eval": lambda: _check(
        "batchnorm_eval", BatchNorm2d("bn", 3, dtype=np.float64), (2, 3, 4, 4),
        OP_TOL, train=False),
    "fully_connected": lambda: _check(
        "fully_connected", Linear("fc", 5, 3, seed=1, dtype=np.float64),
        (4, 5), OP_TOL),
    "relu": lambda: _check(
        "relu", _FnModule(ops.relu, ops.relu_backward), (2, 3, 4, 4), OP_TOL),
    "sigmoid": lambda: _check(
        "sigmoid", _FnModule(ops.sigmoid, ops.sigmoid_backward), (2, 3, 4, 4),
        OP_TOL),
    "global_avg_pool": lambda: _check(
        "global_avg_pool",
        _FnModule(ops.global_avg_pool, ops.global_avg_pool_backward),
        (2, 3, 4, 4), OP_TOL),
    "global_max_pool": lambda: _check(
        "global_max_pool",
        _FnModule(ops.global_max_pool, ops.global_max_pool_backward),
        (2, 3, 4, 4), OP_TOL),
    "channel_mean": lambda: _check(
        "channel_mean", _FnModule(ops.channel_mean, ops.channel_mean_backward),
        (2, 3, 4, 4), OP_TOL),
    "channel_max": lambda: _check(
        "channel_max", _FnModule(ops.channel_max, ops.channel_max_backward),
        (2, 3, 4, 4), OP_TOL),
    "elemwise_mul_broadcast": lambda: _check(
        "elemwise_mul_broadcast",
        _FnModule(lambda u: ops.elemwise_mul_broadcast(u[:, :3], u[:, 3:4]),
                  lambda g, c: np.concatenate(
                      ops.elemwise_mul_broadcast_backward(g, c), axis=1)),
        (2, 4, 4, 4), OP_TOL),
    "concat_channels": lambda: _check(
        "concat_channels",
        _FnModule(lambda u: ops.concat_channels([u[:, :2], u[:, 2:]]),
                  lambda g, w: np.concatenate(
                      ops.concat_channels_backward(g, w), axis=1)),
        (2, 5, 3, 3), OP_TOL),
    "sa_extract": lambda: _check(
        "sa_extract", _ExtractHarness(_sa()), (1, 4, 6, 6), MODULE_TOL),
    "sa_transform": lambda: _check(
        "sa_transform", _TransformHarness(_sa()), (1, 8, 5, 5), MODULE_TOL),
    "sa_attention": lambda: _check(
        "sa_attention", _AttentionHarness(_sa()), (1, 4, 6, 6), MODULE_TOL),
    "sa_fuse": lambda: _check(
        "sa_fuse", _FuseHarness(_sa()), (1, 10, 5, 5), MODULE_TOL),
    "sa_forward": lambda: _check(
        "sa_forward", _sa(), (1, 4, 6, 6), MODULE_TOL),
    "ca_forward": lambda: _check(
        "ca_forward", CAModule("ca", 8, 4, seed=1, dtype=np.float64),
        (2, 8, 4, 4), MODULE_TOL),
    "mks_block_forward": lambda: _check(
        "mks_block_forward", MKSBlock("blk", 4, 2, 7, 2, seed=1, dtype=np.float64),
        (1, 4, 6, 6), MODULE_TOL),
    "patch_embed": lambda: _check(
        "patch_embed",
        PatchEmbed("pe", BackboneConfig(stages=(StageConfig(1, 4, 2, 7, 2),)),
                   seed=1, dtype=np.float64), (2, 3, 8, 8), MODULE_TOL),
    "backbone_head": lambda: _check(
        "backbone_head", _tiny_model(), (1, 3, 8, 8), MODULE_TOL),
    "bce_loss": _check_bce,
    "_broken": _broken,
}

MODULE_GROUPS = {
    "tensor-core": ["conv2d", "conv2d_grouped", "conv2d_strided", "batchnorm",
                    "batchnorm_eval", "fully_connected", "relu", "sigmoid",
                    "global_avg_pool", "global_max_pool", "channel_mean",
                    "channel_max", "elemwise_mul_broadcast", "concat_channels"],
    "mks-attention": ["sa_extract", "sa_transform", "sa_attention", "sa_fuse",
                      "sa_forward", "ca_forward", "mks_block_forward"],
    "backbone": ["patch_embed", "backbone_head"],
    "train-harness": ["bce_loss"],
}


def resolve_scope(scope: str) -> list:
    if scope == "all":
        return [n for n in REGISTRY if not n.startswith("_")]
    if scope in MODULE_GROUPS:
        return MODULE_GROUPS[scope]
    if scope in REGISTRY:
        return [scope]
    raise KeyError(scope)


def run_checks(scope: str) -> list:
    return [REGISTRY[name]() for name in resolve_scope(scope)]
