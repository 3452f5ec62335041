"""Multi-stage backbone built from attention blocks, plus counting utilities.

The stem embeds the image with a strided convolution; each later stage starts
with a stride-2 downsampling conv. Stage blocks come in four structural
variants used by the ablation harness:

  base   -- residual depthwise-3x3 + BN + ReLU + pointwise block, no attention
  ca     -- base block followed by a residual channel-attention module
  sa     -- base block followed by a residual spatial-attention module
  sa_ca  -- base block followed by the full dual-attention block (channel
            then spatial attention, two residuals)

Attention is added on top of the convolutional block rather than replacing
it, so each variant toggles exactly one module relative to its neighbours
and every variant retains the same local mixing capacity.

FLOPs are counted as 2 x multiply-accumulates of conv and FC layers, closed
form per layer; batch norm, activations, and elementwise products are not
counted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .attention import ATTN_KERNEL, CAModule, MKSBlock, SAModule
from .layers import BatchNorm2d, Conv2d, Module, Param, ReLU, Sequential

VARIANTS = ("base", "sa", "ca", "sa_ca")


@dataclass(frozen=True)
class StageConfig:
    depth: int
    channels: int
    branches: int = 2
    max_size: int = 7
    reduction: int = 8

    def __post_init__(self):
        if self.channels % self.branches or self.channels % self.reduction:
            raise ValueError(
                f"channels={self.channels} must be divisible by "
                f"S={self.branches} and r={self.reduction}")


@dataclass(frozen=True)
class BackboneConfig:
    patch_kernel: int = 4
    patch_stride: int = 4
    in_channels: int = 3
    variant: str = "sa_ca"
    stages: tuple = field(default_factory=lambda: (
        StageConfig(1, 32), StageConfig(1, 64)))

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        widths = [s.channels for s in self.stages]
        if widths != sorted(widths):
            raise ValueError(f"stage widths must be non-decreasing, got {widths}")

    def total_stride(self) -> int:
        return self.patch_stride * 2 ** (len(self.stages) - 1)


class Residual(Module):
    """x + scale * inner(x) with a learnable per-channel scale, initialized 1."""

    def __init__(self, name: str, inner: Module, channels: int, dtype=np.float32):
        self.inner = inner
        self.scale = Param(f"{name}.scale", np.ones(channels, dtype=dtype))
        self._cache = None

    def children(self):
        return [self.inner]

    def params(self):
        return super().params() + [self.scale]

    def forward(self, x, train=False):
        y = self.inner.forward(x, train=train)
        self._cache = y
        return x + self.scale.value[None, :, None, None] * y

    def backward(self, grad_out):
        self.scale.grad += (grad_out * self._cache).sum(axis=(0, 2, 3))
        return grad_out + self.inner.backward(
            grad_out * self.scale.value[None, :, None, None])


def make_block(name, variant, channels, branches, max_size, reduction, seed,
               dtype=np.float32):
    inner = Sequential(
        Conv2d(f"{name}.dw", ops.ConvSpec(channels, channels, (3, 3), padding=1,
                                          groups=channels), seed, bias=False,
               dtype=dtype),
        BatchNorm2d(f"{name}.bn", channels, dtype=dtype),
        ReLU(),
        Conv2d(f"{name}.pw", ops.ConvSpec(channels, channels, (1, 1)), seed,
               dtype=dtype))
    conv = Residual(name, inner, channels, dtype=dtype)
    if variant == "base":
        return conv
    if variant == "sa_ca":
        attn = MKSBlock(name, channels, branches, max_size, reduction, seed,
                        dtype=dtype)
    elif variant == "sa":
        attn = Residual(f"{name}.sa_res",
                        SAModule(f"{name}.sa", channels, branches, max_size,
                                 seed, dtype=dtype), channels, dtype=dtype)
    else:
        attn = Residual(f"{name}.ca_res",
                        CAModule(f"{name}.ca", channels, reduction, seed,
                                 dtype=dtype), channels, dtype=dtype)
    return Sequential(conv, attn)


class PatchEmbed(Module):
    def __init__(self, name, config: BackboneConfig, seed, dtype=np.float32):
        c0 = config.stages[0].channels
        self.stride = config.patch_stride
        self.conv = Conv2d(name + ".conv",
                           ops.ConvSpec(config.in_channels, c0,
                                        (config.patch_kernel, config.patch_kernel),
                                        stride=config.patch_stride),
                           seed, bias=False, dtype=dtype)
        self.bn = BatchNorm2d(name + ".bn", c0, dtype=dtype)

    def children(self):
        return [self.conv, self.bn]

    def forward(self, x, train=False):
        if x.shape[2] % self.stride or x.shape[3] % self.stride:
            raise ValueError(
                f"input {x.shape[2]}x{x.shape[3]} not divisible by patch "
                f"stride {self.stride}")
        return self.bn.forward(self.conv.forward(x), train=train)

    def backward(self, grad_out):
        return self.conv.backward(self.bn.backward(grad_out))


class Backbone(Module):
    def __init__(self, config: BackboneConfig, seed: int, dtype=np.float32):
        self.config = config
        self.patch_embed = PatchEmbed("patch_embed", config, seed, dtype=dtype)
        self.downsamples = []  # entry i transitions stage i-1 -> stage i
        self.stages = []
        prev = config.stages[0].channels
        for si, sc in enumerate(config.stages):
            if si > 0:
                self.downsamples.append(Sequential(
                    Conv2d(f"down{si}.conv",
                           ops.ConvSpec(prev, sc.channels, (2, 2), stride=2),
                           seed, bias=False, dtype=dtype),
                    BatchNorm2d(f"down{si}.bn", sc.channels, dtype=dtype)))
            blocks = [make_block(f"stage{si}.block{bi}", config.variant,
                                 sc.channels, sc.branches, sc.max_size,
                                 sc.reduction, seed, dtype=dtype)
                      for bi in range(sc.depth)]
            self.stages.append(Sequential(*blocks))
            prev = sc.channels

    def children(self):
        return [self.patch_embed] + self.downsamples + self.stages

    def forward(self, x, train=False):
        """Returns the list of per-stage feature maps."""
        feats = []
        h = self.patch_embed.forward(x, train=train)
        for si, stage in enumerate(self.stages):
            if si > 0:
                h = self.downsamples[si - 1].forward(h, train=train)
            h = stage.forward(h, train=train)
            feats.append(h)
        return feats

    def backward(self, grad_feats):
        """grad_feats: one gradient per stage output (None allowed)."""
        grad = None
        for si in reversed(range(len(self.stages))):
            g = grad_feats[si]
            if grad is not None:
                g = grad if g is None else g + grad
            grad = self.stages[si].backward(g)
            if si > 0:
                grad = self.downsamples[si - 1].backward(grad)
        return self.patch_embed.backward(grad)


class DetectionModel(Module):
    """Backbone plus a 1x1-conv heatmap head on the last stage: one presence
    logit per output cell."""

    def __init__(self, config: BackboneConfig, seed: int, dtype=np.float32):
        self.backbone = Backbone(config, seed, dtype=dtype)
        self.head = Conv2d("head",
                           ops.ConvSpec(config.stages[-1].channels, 1, (1, 1)),
                           seed, dtype=dtype)

    def children(self):
        return [self.backbone, self.head]

    def forward(self, x, train=False):
        feats = self.backbone.forward(x, train=train)
        return self.head.forward(feats[-1])

    def backward(self, grad_out):
        g_last = self.head.backward(grad_out)
        grads = [None] * (len(self.backbone.stages) - 1) + [g_last]
        return self.backbone.backward(grads)


def count_params(module: Module) -> int:
    return sum(p.value.size for p in module.params())


def named_tensors(module: Module) -> dict:
    """All persistent tensors: parameters plus batch-norm running stats."""
    out = {p.name: p.value for p in module.params()}
    out.update(module.state_tensors())
    return out


def _conv_row(name, spec: ops.ConvSpec, h, w, bias=True):
    kh, kw = spec.kernel
    params = spec.out_channels * (spec.in_channels // spec.groups) * kh * kw
    if bias:
        params += spec.out_channels
    return (name, params, 2 * spec.macs(h, w)), spec.out_size(h, w)


def _fc_rows(name, dims):
    """dims: list of (tag, c_in, c_out); one sample."""
    return [(f"{name}.{tag}", c_in * c_out + c_out, 2 * c_in * c_out)
            for tag, c_in, c_out in dims]


def flops_breakdown(config: BackboneConfig, input_hw) -> list:
    """Per-layer (name, params, flops) rows for a single sample, counting conv
    and FC layers closed-form. Matches the instrumented MAC counter."""
    h, w = input_hw
    rows = []
    c0 = config.stages[0].channels
    row, (h, w) = _conv_row("patch_embed", ops.ConvSpec(
        config.in_channels, c0, (config.patch_kernel, config.patch_kernel),
        stride=config.patch_stride), h, w, bias=False)
    rows.append(row)
    prev = c0
    for si, sc in enumerate(config.stages):
        c = sc.channels
        if si > 0:
            row, (h, w) = _conv_row(f"down{si}", ops.ConvSpec(
                prev, c, (2, 2), stride=2), h, w, bias=False)
            rows.append(row)
        for bi in range(sc.depth):
            tag = f"stage{si}.block{bi}"
            rows.append(_conv_row(f"{tag}.dw", ops.ConvSpec(
                c, c, (3, 3), padding=1, groups=c), h, w, bias=False)[0])
            rows.append(_conv_row(f"{tag}.pw",
                                  ops.ConvSpec(c, c, (1, 1)), h, w)[0])
            if config.variant in ("ca", "sa_ca"):
                hidden = c // sc.reduction
                rows += _fc_rows(f"{tag}.ca", [
                    ("avg_mlp.fc1", c, hidden), ("avg_mlp.fc2", hidden, c),
                    ("max_mlp.fc1", c, hidden), ("max_mlp.fc2", hidden, c),
                    ("mix", c, c)])
            if config.variant in ("sa", "sa_ca"):
                from .attention import build_schedule
                for i, (k, d, p) in enumerate(
                        build_schedule(sc.branches, sc.max_size).entries):
                    br = f"{tag}.sa.branch{i}"
                    rows.append(_conv_row(f"{br}.spatial", ops.ConvSpec(
                        c, c, (k, k), dilation=d, padding=p, groups=c),
                        h, w, bias=False)[0])
                    rows.append(_conv_row(f"{br}.pointwise",
                                          ops.ConvSpec(c, c, (1, 1)), h, w)[0])
                    rows.append(_conv_row(f"{br}.transform", ops.ConvSpec(
                        c, c // sc.branches, (1, 1)), h, w)[0])
                rows.append(_conv_row(f"{tag}.sa.attn", ops.ConvSpec(
                    2, sc.branches, (ATTN_KERNEL, ATTN_KERNEL),
                    padding=ATTN_KERNEL // 2), h, w)[0])
                rows.append(_conv_row(f"{tag}.sa.out", ops.ConvSpec(
                    c // sc.branches, c, (1, 1)), h, w)[0])
        prev = c
    rows.append(_conv_row("head", ops.ConvSpec(prev, 1, (1, 1)), h, w)[0])
    return rows


def count_flops(config: BackboneConfig, input_hw) -> int:
    """Total conv/FC FLOPs (2 x MACs) of the detection model, single sample."""
    return sum(r[2] for r in flops_breakdown(config, input_hw))
