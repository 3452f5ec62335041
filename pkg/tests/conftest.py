import numpy as np
import pytest

from mksnet.ops import ConvSpec
from mksnet.rng import Stream


def naive_conv2d(x, w, b, spec: ConvSpec):
    """Six-nested-loop direct convolution oracle (plus batch and out-channel)."""
    bsz = x.shape[0]
    ho, wo = spec.out_size(x.shape[2], x.shape[3])
    kh, kw = spec.kernel
    cig = spec.in_channels // spec.groups
    cog = spec.out_channels // spec.groups
    p = spec.padding
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    out = np.zeros((bsz, spec.out_channels, ho, wo), dtype=x.dtype)
    for n in range(bsz):
        for o in range(spec.out_channels):
            g = o // cog
            for oh in range(ho):
                for ow in range(wo):
                    acc = 0.0 if b is None else b[o]
                    for c in range(cig):
                        for i in range(kh):
                            for j in range(kw):
                                acc += xp[n, g * cig + c,
                                          oh * spec.stride + i * spec.dilation,
                                          ow * spec.stride + j * spec.dilation] \
                                    * w[o, c, i, j]
                    out[n, o, oh, ow] = acc
    return out


@pytest.fixture
def stream():
    return Stream(2024, "tests")
