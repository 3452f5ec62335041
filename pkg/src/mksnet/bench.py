"""FLOPs/params table, forward latency, and backend micro-benchmark."""

from __future__ import annotations

import time

import numpy as np

from . import backend, kernels_numpy, ops
from .backbone import BackboneConfig, DetectionModel, count_flops, count_params, \
    flops_breakdown
from .rng import Stream


def median_latency(fn, repeats: int = 5) -> float:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def dense_equivalent_flops(channels: int, kernel: int, dilation: int, hw) -> tuple:
    """(depthwise flops, flops of the dense kernel spanning the same field)."""
    span = (kernel - 1) * dilation + 1
    dw = ops.ConvSpec(channels, channels, (kernel, kernel), dilation=dilation,
                      padding=(kernel - 1) * dilation // 2, groups=channels)
    dense = ops.ConvSpec(channels, channels, (span, span), padding=span // 2)
    return 2 * dw.macs(*hw), 2 * dense.macs(*hw)


def backend_comparison(shape=(4, 32, 32, 32), kernel=7, dilation=2, repeats=5):
    """Times the same depthwise conv under the numpy path and, when available,
    the numba path. Returns rows of (backend, forward seconds)."""
    b, c, h, w = shape
    x = Stream(0, "bench-x").uniform(shape, -1, 1, dtype=np.float32)
    pad = (kernel - 1) * dilation // 2
    wgt = Stream(0, "bench-w").uniform((c, 1, kernel, kernel), -1, 1,
                                       dtype=np.float32)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))

    rows = []
    impls = [("numpy", kernels_numpy)]
    try:
        from . import kernels_numba
        kernels_numba.conv2d_raw(xp, wgt, 1, dilation, c, h, w)  # warm up JIT
        impls.append(("numba", kernels_numba))
    except ImportError:
        pass
    for name, impl in impls:
        rows.append((name, median_latency(
            lambda: impl.conv2d_raw(xp, wgt, 1, dilation, c, h, w), repeats)))
    return rows


def run_bench(cfg, out=print):
    model_cfg: BackboneConfig = cfg.model
    hw = (cfg.train.image_size, cfg.train.image_size)
    rows = flops_breakdown(model_cfg, hw)
    out(f"{'layer':40s} {'params':>10s} {'flops':>14s}")
    for name, params, flops in rows:
        out(f"{name:40s} {params:>10d} {flops:>14d}")
    model = DetectionModel(model_cfg, seed=cfg.train.seed)
    total_flops = count_flops(model_cfg, hw)
    out(f"{'TOTAL (conv/fc)':40s} {sum(r[1] for r in rows):>10d} {total_flops:>14d}")
    out(f"model parameters (all tensors): {count_params(model)}")

    x = Stream(cfg.train.seed, "bench-input").uniform(
        (1, model_cfg.in_channels, *hw), 0, 1, dtype=np.float32)
    model.forward(x)  # warm up (JIT compilation under the numba backend)
    lat = median_latency(lambda: model.forward(x))
    out(f"forward latency (median of 5, backend={backend.get_backend()}): "
        f"{lat * 1e3:.2f} ms")

    dw, dense = dense_equivalent_flops(64, 7, 2, (32, 32))
    out(f"depthwise k=7 d=2 @C=64 32x32: {dw} flops; "
        f"dense 13x13 same span: {dense} flops")

    out("backend comparison (depthwise k=7 d=2 conv, 4x32x32x32):")
    for name, secs in backend_comparison():
        out(f"  {name:6s} {secs * 1e3:9.2f} ms")
