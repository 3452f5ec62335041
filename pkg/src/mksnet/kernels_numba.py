"""Numba @njit direct convolution kernels.

Same contracts as kernels_numpy. Parallel loops are arranged so every thread
writes a disjoint slice of the output; accumulation order within a slice is
fixed, so results are bit-reproducible run to run.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange


@njit(parallel=True, fastmath=False, cache=True)
def _conv2d(xp, w, out, stride, dilation, groups):
    b, c_in, hp, wp = xp.shape
    c_out, c_in_g, kh, kw = w.shape
    h_out, w_out = out.shape[2], out.shape[3]
    co_g = c_out // groups
    for bo in prange(b * c_out):
        n = bo // c_out
        co = bo % c_out
        g = co // co_g
        c0 = g * c_in_g
        for oh in range(h_out):
            ih0 = oh * stride
            for ow in range(w_out):
                iw0 = ow * stride
                acc = 0.0
                for c in range(c_in_g):
                    for i in range(kh):
                        for j in range(kw):
                            acc += xp[n, c0 + c, ih0 + i * dilation, iw0 + j * dilation] \
                                * w[co, c, i, j]
                out[n, co, oh, ow] = acc


@njit(parallel=True, fastmath=False, cache=True)
def _conv2d_grad_input(grad_out, w, gxp, stride, dilation, groups):
    b, c_out, h_out, w_out = grad_out.shape
    _, c_in_g, kh, kw = w.shape
    co_g = c_out // groups
    c_in = gxp.shape[1]
    for bc in prange(b * c_in):
        n = bc // c_in
        c = bc % c_in
        g = c // c_in_g
        cg = c % c_in_g
        o0 = g * co_g
        for oh in range(h_out):
            ih0 = oh * stride
            for ow in range(w_out):
                iw0 = ow * stride
                for co in range(co_g):
                    go = grad_out[n, o0 + co, oh, ow]
                    for i in range(kh):
                        for j in range(kw):
                            gxp[n, c, ih0 + i * dilation, iw0 + j * dilation] += \
                                go * w[o0 + co, cg, i, j]


@njit(parallel=True, fastmath=False, cache=True)
def _conv2d_grad_weight(grad_out, xp, gw, stride, dilation, groups):
    b, c_out, h_out, w_out = grad_out.shape
    _, c_in_g, kh, kw = gw.shape
    co_g = c_out // groups
    for co in prange(c_out):
        g = co // co_g
        c0 = g * c_in_g
        for c in range(c_in_g):
            for i in range(kh):
                for j in range(kw):
                    acc = 0.0
                    for n in range(b):
                        for oh in range(h_out):
                            for ow in range(w_out):
                                acc += grad_out[n, co, oh, ow] * \
                                    xp[n, c0 + c, oh * stride + i * dilation,
                                       ow * stride + j * dilation]
                    gw[co, c, i, j] = acc


def conv2d_raw(xp, w, stride, dilation, groups, h_out, w_out):
    out = np.empty((xp.shape[0], w.shape[0], h_out, w_out), dtype=xp.dtype)
    _conv2d(xp, w, out, stride, dilation, groups)
    return out


def conv2d_grad_input_raw(grad_out, w, stride, dilation, groups, hp, wp):
    gxp = np.zeros((grad_out.shape[0], w.shape[1] * groups, hp, wp),
                   dtype=grad_out.dtype)
    _conv2d_grad_input(grad_out, w, gxp, stride, dilation, groups)
    return gxp


def conv2d_grad_weight_raw(grad_out, xp, stride, dilation, groups, kh, kw):
    gw = np.empty((grad_out.shape[1], xp.shape[1] // groups, kh, kw),
                  dtype=grad_out.dtype)
    _conv2d_grad_weight(grad_out, xp, gw, stride, dilation, groups)
    return gw
