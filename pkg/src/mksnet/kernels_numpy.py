"""Pure-numpy direct convolution kernels.

All three kernels loop over the (kh, kw) taps and use strided slices of the
padded input, so each tap is a single einsum over (batch, space). No im2col
buffer is materialized.
"""

from __future__ import annotations

import numpy as np


def conv2d_raw(xp, w, stride, dilation, groups, h_out, w_out):
    b = xp.shape[0]
    c_out, c_in_g, kh, kw = w.shape
    co_g = c_out // groups
    out = np.zeros((b, c_out, h_out, w_out), dtype=xp.dtype)
    for g in range(groups):
        xg = xp[:, g * c_in_g:(g + 1) * c_in_g]
        wg = w[g * co_g:(g + 1) * co_g]
        og = out[:, g * co_g:(g + 1) * co_g]
        for i in range(kh):
            for j in range(kw):
                patch = xg[:, :,
                           i * dilation:i * dilation + (h_out - 1) * stride + 1:stride,
                           j * dilation:j * dilation + (w_out - 1) * stride + 1:stride]
                og += np.einsum("bchw,oc->bohw", patch, wg[:, :, i, j])
    return out


def conv2d_grad_input_raw(grad_out, w, stride, dilation, groups, hp, wp):
    b, c_out, h_out, w_out = grad_out.shape
    _, c_in_g, kh, kw = w.shape
    co_g = c_out // groups
    gxp = np.zeros((b, groups * c_in_g, hp, wp), dtype=grad_out.dtype)
    for g in range(groups):
        gog = grad_out[:, g * co_g:(g + 1) * co_g]
        wg = w[g * co_g:(g + 1) * co_g]
        gxg = gxp[:, g * c_in_g:(g + 1) * c_in_g]
        for i in range(kh):
            for j in range(kw):
                gxg[:, :,
                    i * dilation:i * dilation + (h_out - 1) * stride + 1:stride,
                    j * dilation:j * dilation + (w_out - 1) * stride + 1:stride] += \
                    np.einsum("bohw,oc->bchw", gog, wg[:, :, i, j])
    return gxp


def conv2d_grad_weight_raw(grad_out, xp, stride, dilation, groups, kh, kw):
    b, c_out, h_out, w_out = grad_out.shape
    c_in = xp.shape[1]
    c_in_g = c_in // groups
    co_g = c_out // groups
    gw = np.zeros((c_out, c_in_g, kh, kw), dtype=grad_out.dtype)
    for g in range(groups):
        xg = xp[:, g * c_in_g:(g + 1) * c_in_g]
        gog = grad_out[:, g * co_g:(g + 1) * co_g]
        for i in range(kh):
            for j in range(kw):
                patch = xg[:, :,
                           i * dilation:i * dilation + (h_out - 1) * stride + 1:stride,
                           j * dilation:j * dilation + (w_out - 1) * stride + 1:stride]
                gw[g * co_g:(g + 1) * co_g, :, i, j] = \
                    np.einsum("bohw,bchw->oc", gog, patch)
    return gw
