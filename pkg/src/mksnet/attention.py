"""Multi-kernel spatial attention, channel attention, and the combined block.

The spatial module runs S parallel branches of growing kernel size and
dilation. Branch i applies a depthwise k_i x k_i conv (dilation d_i), batch
norm, a pointwise 1x1 conv mixing channels, and ReLU; a second pointwise conv
projects each branch to C/S channels. Per-pixel branch weights come from a
7x7 conv over the channel mean/max of the concatenated branches, through a
sigmoid. The weighted sum is projected back to C channels and gates the input.

The channel module gates each channel with a sigmoid scalar computed from
global average and max pooled statistics pushed through two separate
bottleneck MLPs (C -> C/r -> C, ReLU after each layer), averaged, and mixed by
a final C -> C linear layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .layers import BatchNorm2d, Conv2d, Linear, Module, Param, ReLU, Sequential

ATTN_KERNEL = 7  # kernel size of the 2 -> S branch-weight conv


@dataclass(frozen=True)
class KernelSchedule:
    """Per-branch (kernel, dilation, padding) triples.

    k_i = min(5 + 2i, max_size), d_i = i + 1, p_i = (k_i - 1) * d_i / 2;
    padding keeps spatial size unchanged at stride 1.
    """
    branches: int
    max_size: int
    entries: tuple  # of (k, d, p)


def build_schedule(branches: int, max_size: int) -> KernelSchedule:
    if branches < 1:
        raise ValueError("branch count must be >= 1")
    if max_size < 5 or max_size % 2 == 0:
        raise ValueError("max_size must be odd and >= 5")
    entries = []
    for i in range(branches):
        k = min(5 + 2 * i, max_size)
        d = i + 1
        entries.append((k, d, (k - 1) * d // 2))
    return KernelSchedule(branches, max_size, tuple(entries))


class SAModule(Module):
    def __init__(self, name: str, channels: int, branches: int, max_size: int,
                 seed: int, dtype=np.float32):
        if channels % branches:
            raise ValueError(f"channels={channels} not divisible by S={branches}")
        self.channels = channels
        self.schedule = build_schedule(branches, max_size)
        c, s = channels, branches
        self.extractors = []
        self.transforms = []
        for i, (k, d, p) in enumerate(self.schedule.entries):
            spatial = Conv2d(f"{name}.branch{i}.spatial",
                             ops.ConvSpec(c, c, (k, k), dilation=d, padding=p,
                                          groups=c), seed, bias=False, dtype=dtype)
            bn = BatchNorm2d(f"{name}.branch{i}.bn", c, dtype=dtype)
            pointwise = Conv2d(f"{name}.branch{i}.pointwise",
                               ops.ConvSpec(c, c, (1, 1)), seed, dtype=dtype)
            self.extractors.append(Sequential(spatial, bn, pointwise, ReLU()))
            self.transforms.append(
                Conv2d(f"{name}.branch{i}.transform",
                       ops.ConvSpec(c, c // s, (1, 1)), seed, dtype=dtype))
        self.attn_conv = Conv2d(f"{name}.attn",
                                ops.ConvSpec(2, s, (ATTN_KERNEL, ATTN_KERNEL),
                                             padding=ATTN_KERNEL // 2),
                                seed, dtype=dtype)
        self.out_conv = Conv2d(f"{name}.out",
                               ops.ConvSpec(c // s, c, (1, 1)), seed, dtype=dtype)
        # zero output projection: the module starts as a no-op (x * 0 fused
        # output) so a residual wrapper begins as the identity and the
        # attention path switches on only as its gradient warrants
        self.out_conv.weight.value[...] = 0.0
        self.out_conv.bias.value[...] = 0.0
        self._cache = None

    def children(self):
        return self.extractors + self.transforms + [self.attn_conv, self.out_conv]

    # -- stages -------------------------------------------------------------

    def extract(self, x, train=False):
        """Per-branch multi-scale feature maps, each shaped like x."""
        if x.shape[1] != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {x.shape[1]}")
        return [e.forward(x, train=train) for e in self.extractors]

    def extract_backward(self, grads):
        gx = self.extractors[0].backward(grads[0])
        for e, g in zip(self.extractors[1:], grads[1:]):
            gx += e.backward(g)
        return gx

    def transform(self, feats):
        """Project each branch to C/S channels and concatenate in branch order."""
        t_list = [tr.forward(f) for tr, f in zip(self.transforms, feats)]
        t, widths = ops.concat_channels(t_list)
        return t_list, t, widths

    def attention(self, t):
        """Per-pixel branch weights in (0,1), one channel per branch."""
        mean, mean_shape = ops.channel_mean(t)
        mx, max_cache = ops.channel_max(t)
        m, m_widths = ops.concat_channels([mean, mx])
        logits = self.attn_conv.forward(m)
        sig, sig_cache = ops.sigmoid(logits)
        self._attn_cache = (mean_shape, max_cache, m_widths, sig_cache)
        return sig

    def attention_backward(self, grad_sig):
        mean_shape, max_cache, m_widths, sig_cache = self._attn_cache
        g_logits = ops.sigmoid_backward(grad_sig, sig_cache)
        g_m = self.attn_conv.backward(g_logits)
        g_mean, g_max = ops.concat_channels_backward(g_m, m_widths)
        return ops.channel_mean_backward(g_mean, mean_shape) \
            + ops.channel_max_backward(g_max, max_cache)

    def fuse(self, x, t_list, sig):
        """Weight branches by sig, sum, project C/S -> C, gate the input."""
        if sig.shape[1] != len(t_list):
            raise ValueError(f"{len(t_list)} branches but {sig.shape[1]} weight maps")
        mul_caches = []
        p = None
        for i, t in enumerate(t_list):
            prod, cache = ops.elemwise_mul_broadcast(t, sig[:, i:i + 1])
            mul_caches.append(cache)
            p = prod if p is None else p + prod
        q = self.out_conv.forward(p)
        out, gate_cache = ops.elemwise_mul_broadcast(x, q)
        self._fuse_cache = (mul_caches, gate_cache, sig.shape)
        return out

    def fuse_backward(self, grad_out):
        mul_caches, gate_cache, sig_shape = self._fuse_cache
        gx, gq = ops.elemwise_mul_broadcast_backward(grad_out, gate_cache)
        gp = self.out_conv.backward(gq)
        g_t_list = []
        g_sig = np.empty(sig_shape, dtype=grad_out.dtype)
        for i, cache in enumerate(mul_caches):
            gt, gs = ops.elemwise_mul_broadcast_backward(gp, cache)
            g_t_list.append(gt)
            g_sig[:, i:i + 1] = gs
        return gx, g_t_list, g_sig

    # -- full module ----------------------------------------------------------

    def forward(self, x, train=False):
        feats = self.extract(x, train=train)
        t_list, t, widths = self.transform(feats)
        sig = self.attention(t)
        out = self.fuse(x, t_list, sig)
        self._cache = widths
        return out

    def backward(self, grad_out):
        widths = self._cache
        gx, g_t_list, g_sig = self.fuse_backward(grad_out)
        g_t = self.attention_backward(g_sig)
        g_t_parts = ops.concat_channels_backward(g_t, widths)
        g_feats = []
        for tr, g_direct, g_concat in zip(self.transforms, g_t_list, g_t_parts):
            g_feats.append(tr.backward(g_direct + g_concat))
        return gx + self.extract_backward(g_feats)


class CAModule(Module):
    def __init__(self, name: str, channels: int, reduction: int, seed: int,
                 dtype=np.float32):
        if channels % reduction:
            raise ValueError(f"channels={channels} not divisible by r={reduction}")
        self.channels = channels
        self.reduction = reduction
        hidden = channels // reduction
        self.avg_mlp = Sequential(
            Linear(f"{name}.avg_mlp.fc1", channels, hidden, seed, dtype=dtype),
            ReLU(),
            Linear(f"{name}.avg_mlp.fc2", hidden, channels, seed, dtype=dtype),
            ReLU())
        self.max_mlp = Sequential(
            Linear(f"{name}.max_mlp.fc1", channels, hidden, seed, dtype=dtype),
            ReLU(),
            Linear(f"{name}.max_mlp.fc2", hidden, channels, seed, dtype=dtype),
            ReLU())
        self.mix = Linear(f"{name}.mix", channels, channels, seed, dtype=dtype)
        # the gate path sits behind a sigmoid and two pooling bottlenecks and
        # is the slowest-learning part of the block; a boosted init spreads
        # the initial gates away from the uniform 0.5 so the symmetry breaks
        # and useful gate gradients appear within a short training budget
        for lin in (self.avg_mlp.layers[0], self.avg_mlp.layers[2],
                    self.max_mlp.layers[0], self.max_mlp.layers[2]):
            lin.weight.value *= 2.0
        # zero bias keeps the initial gates centered on 0.5
        self.mix.bias.value[...] = 0.0
        self._cache = None

    def children(self):
        return [self.avg_mlp, self.max_mlp, self.mix]

    def gates(self, x, train=False):
        """Per-(batch, channel) sigmoid gates, shape (B, C)."""
        avg, avg_shape = ops.global_avg_pool(x)
        mx, max_cache = ops.global_max_pool(x)
        a = self.avg_mlp.forward(avg, train=train)
        m = self.max_mlp.forward(mx, train=train)
        logits = self.mix.forward((a + m) / 2)
        gate, gate_cache = ops.sigmoid(logits)
        self._gate_cache = (avg_shape, max_cache, gate_cache)
        return gate

    def gates_backward(self, grad_gate):
        avg_shape, max_cache, gate_cache = self._gate_cache
        g_logits = ops.sigmoid_backward(grad_gate, gate_cache)
        g_half = self.mix.backward(g_logits) / 2
        g_avg = self.avg_mlp.backward(g_half)
        g_max = self.max_mlp.backward(g_half)
        return ops.global_avg_pool_backward(g_avg, avg_shape) \
            + ops.global_max_pool_backward(g_max, max_cache)

    def forward(self, x, train=False):
        gate = self.gates(x, train=train)
        out, mul_cache = ops.elemwise_mul_broadcast(x, gate[:, :, None, None])
        self._cache = mul_cache
        return out

    def backward(self, grad_out):
        gx, g_gate4 = ops.elemwise_mul_broadcast_backward(grad_out, self._cache)
        return gx + self.gates_backward(g_gate4[:, :, 0, 0])


class MKSBlock(Module):
    """Residual channel-attention then residual spatial-attention, each scaled
    by a learnable per-channel factor initialized to 1."""

    def __init__(self, name: str, channels: int, branches: int, max_size: int,
                 reduction: int, seed: int, dtype=np.float32):
        self.ca = CAModule(f"{name}.ca", channels, reduction, seed, dtype=dtype)
        self.sa = SAModule(f"{name}.sa", channels, branches, max_size, seed,
                           dtype=dtype)
        self.ca_scale = Param(f"{name}.ca_scale", np.ones(channels, dtype=dtype))
        self.sa_scale = Param(f"{name}.sa_scale", np.ones(channels, dtype=dtype))
        self._cache = None

    def children(self):
        return [self.ca, self.sa]

    def params(self):
        return super().params() + [self.ca_scale, self.sa_scale]

    def forward(self, x, train=False):
        ca_out = self.ca.forward(x, train=train)
        y = x + self.ca_scale.value[None, :, None, None] * ca_out
        sa_out = self.sa.forward(y, train=train)
        out = y + self.sa_scale.value[None, :, None, None] * sa_out
        self._cache = (ca_out, sa_out)
        return out

    def backward(self, grad_out):
        ca_out, sa_out = self._cache
        self.sa_scale.grad += (grad_out * sa_out).sum(axis=(0, 2, 3))
        g_y = grad_out + self.sa.backward(
            grad_out * self.sa_scale.value[None, :, None, None])
        self.ca_scale.grad += (g_y * ca_out).sum(axis=(0, 2, 3))
        return g_y + self.ca.backward(
            g_y * self.ca_scale.value[None, :, None, None])
