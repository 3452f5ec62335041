"""Acceptance suite: nine criteria, one printed pass/fail line each.

Run with `pytest tests/test_acceptance.py -v -s` to see the lines. Criterion 6
trains twelve models and dominates the runtime; everything else finishes in
well under a minute apiece.
"""

import time

import numpy as np
import pytest

from mksnet import ops
from mksnet.attention import ATTN_KERNEL, CAModule, MKSBlock, SAModule, build_schedule
from mksnet.backbone import (BackboneConfig, DetectionModel, StageConfig,
                             count_flops, flops_breakdown, named_tensors)
from mksnet.checks import MODULE_TOL, run_checks
from mksnet.config import RunConfig, TrainConfig
from mksnet.gradcheck import randomize_params
from mksnet.layers import Conv2d, Module
from mksnet.metrics import ap_from_scores
from mksnet.rng import Stream
from mksnet.serialize import load_tensor, load_weights, dump_tensor, save_weights
from mksnet.train import ablation_run, erf_estimate, train

from conftest import naive_conv2d
from test_metrics import oracle_ap


def _verdict(num, ok, detail):
    line = f"[criterion {num}] {'PASS' if ok else 'FAIL'}: {detail}"
    print(line)
    assert ok, line


def test_criterion_1_conv_oracle_equivalence():
    s = Stream(42, "accept-conv")
    t0 = time.time()
    worst = 0.0
    for trial in range(200):
        kind = trial % 3
        b = int(s.integers((), 1, 2))
        k = int(s.integers((), 1, 3)) * 2 - 1          # 1, 3, 5
        dilation = int(s.integers((), 1, 2)) if kind == 2 else 1
        stride = int(s.integers((), 1, 2))
        if kind == 1:  # depthwise
            c_in = c_out = int(s.integers((), 1, 4))
            groups = c_in
        else:
            c_in = int(s.integers((), 1, 4))
            c_out = int(s.integers((), 1, 4))
            groups = 1
        span = (k - 1) * dilation + 1
        h = span + int(s.integers((), 0, 4))
        w = span + int(s.integers((), 0, 4))
        pad = int(s.integers((), 0, (k - 1) * dilation // 2 if k > 1 else 0))
        hp, wp = h + 2 * pad, w + 2 * pad
        if (hp - (k - 1) * dilation - 1) % stride or \
           (wp - (k - 1) * dilation - 1) % stride:
            stride = 1
        spec = ops.ConvSpec(c_in, c_out, (k, k), stride=stride,
                            dilation=dilation, padding=pad, groups=groups)
        x = s.uniform((b, c_in, h, w), -1.0, 1.0)
        wgt = s.uniform((c_out, c_in // groups, k, k), -1.0, 1.0)
        got, _ = ops.conv2d_forward(x, wgt, None, spec)
        want = naive_conv2d(x, wgt, None, spec)
        scale = max(np.abs(want).max(), 1.0)
        worst = max(worst, np.abs(got - want).max() / scale)
    elapsed = time.time() - t0
    _verdict(1, worst <= 1e-12 and elapsed < 60,
             f"200 conv instances vs naive oracle, max rel err {worst:.2e}, "
             f"{elapsed:.1f}s")


def test_criterion_2_gradient_suite():
    t0 = time.time()
    reports = run_checks("all")
    elapsed = time.time() - t0
    required = {"sa_extract", "sa_attention", "sa_fuse", "sa_forward",
                "ca_forward", "mks_block_forward", "patch_embed",
                "backbone_head", "bce_loss"}
    names = {r.unit for r in reports}
    worst = max(r.max_rel_err for r in reports)
    ok = (required <= names and all(r.passed for r in reports)
          and worst < MODULE_TOL and elapsed < 300)
    _verdict(2, ok, f"{len(reports)} units, max rel err {worst:.2e} "
                    f"(tol {MODULE_TOL:.0e}), {elapsed:.1f}s")


def test_criterion_3_kernel_schedule():
    s = Stream(3, "accept-sched")
    ok = True
    for branches in range(1, 7):
        for max_size in range(5, 22, 2):
            sched = build_schedule(branches, max_size)
            for i, (k, d, p) in enumerate(sched.entries):
                ok &= k == min(5 + 2 * i, max_size)
                ok &= d == i + 1
                ok &= p == (k - 1) * d // 2 and (k - 1) * d % 2 == 0
            c = branches  # one channel per branch keeps this cheap
            sa = SAModule("sa", c * branches, branches, max_size, seed=0,
                          dtype=np.float64)
            h = int(s.integers((), 6, 10))
            w = int(s.integers((), 6, 10))
            x = s.uniform((1, c * branches, h, w), -1.0, 1.0)
            for branch in sa.extractors:
                ok &= branch.forward(x, train=True).shape == x.shape
    _verdict(3, ok, "closed-form (k,d,p) and exact size preservation for "
                    "S in [1,6], odd max_size in [5,21]")


def test_criterion_4_attention_contracts():
    s = Stream(4, "accept-attn")
    sa = SAModule("sa", 8, 2, 7, seed=2, dtype=np.float64)
    randomize_params(sa, seed=6)
    x = s.uniform((2, 8, 6, 6), -1.0, 1.0)
    sig = sa.attention(sa.transform(sa.extract(x, train=True))[1])
    ok = sig.shape == (2, 2, 6, 6) and np.all(sig > 0) and np.all(sig < 1)

    # one-hot map selects exactly one branch
    feats = sa.extract(x, train=True)
    t_list, _, _ = sa.transform(feats)
    one_hot = np.zeros((2, 2, 6, 6))
    one_hot[:, 1] = 1.0
    fused = sa.fuse(x, t_list, one_hot)
    ok &= np.array_equal(fused, x * sa.out_conv.forward(t_list[1]))

    # CA: output/input ratio constant over spatial positions per (b, c)
    ca = CAModule("ca", 8, 4, seed=2, dtype=np.float64)
    randomize_params(ca, seed=7)
    xc = s.uniform((2, 8, 5, 5), 0.2, 1.0)  # nonzero inputs
    ratio = ca.forward(xc, train=True) / xc
    spread = np.abs(ratio - ratio[:, :, :1, :1]).max()
    ok &= spread < 1e-12
    _verdict(4, ok, f"Sig in (0,1)^(B,S,H,W); one-hot selects one branch "
                    f"exactly; CA ratio spatial spread {spread:.1e}")


def test_criterion_5_ap_oracle():
    s = Stream(5, "accept-ap")
    worst = 0.0
    for trial in range(1000):
        n = int(s.integers((), 2, 30))
        scores = s.uniform((n,), 0, 1)
        if trial % 4 == 0:
            scores = np.round(scores * 5) / 5
        labels = (s.uniform((n,), 0, 1) < 0.4).astype(int)
        if labels.sum() == 0:
            labels[0] = 1
        total = int(labels.sum()) + int(s.integers((), 0, 1))
        got = ap_from_scores(scores, labels, total_positives=total)
        worst = max(worst, abs(got - oracle_ap(list(scores), list(labels), total)))
    hand = ap_from_scores([0.9, 0.8, 0.7], [1, 0, 1])
    ok = worst <= 1e-12 and abs(hand - 0.8333333333333333) < 5e-7
    _verdict(5, ok, f"1000 oracle problems, max abs diff {worst:.2e}; "
                    f"hand example AP {hand:.6f}")


def test_criterion_6_ablation_direction():
    t0 = time.time()
    report = ablation_run(RunConfig(), (0, 1, 2))
    elapsed = time.time() - t0
    ap = report.final_ap
    ok = (ap["Base+SA+CA"] > ap["Base+SA"] > ap["Base"]
          and ap["Base+CA"] > ap["Base"]
          and ap["Base+SA+CA"] - ap["Base"] >= 0.03
          and elapsed < 45 * 60)
    _verdict(6, ok, "mean final AP " +
             ", ".join(f"{k} {v:.4f}" for k, v in ap.items()) +
             f"; full-vs-base delta {report.delta('Base+SA+CA'):+.4f}, "
             f"{elapsed / 60:.1f} min")


class _SingleConv(Module):
    def __init__(self):
        self.conv = Conv2d("c", ops.ConvSpec(4, 4, (3, 3), padding=1), seed=3,
                           dtype=np.float64)

    def children(self):
        return [self.conv]

    def forward(self, x, train=False):
        return self.conv.forward(x, train=train)

    def backward(self, g):
        return self.conv.backward(g)


class _SingleBlock(Module):
    def __init__(self):
        self.block = MKSBlock("blk", 4, 2, 7, 2, seed=3, dtype=np.float64)
        randomize_params(self.block, seed=8)

    def children(self):
        return [self.block]

    def forward(self, x, train=False):
        return self.block.forward(x, train=train)

    def backward(self, g):
        return self.block.backward(g)


def test_criterion_7_erf_property():
    t0 = time.time()
    size = 31
    mks = erf_estimate(_SingleBlock(), (1, 4, size, size), samples=4, seed=0)
    conv = erf_estimate(_SingleConv(), (1, 4, size, size), samples=4, seed=0)
    elapsed = time.time() - t0
    ok = (mks.support_width >= 13 and conv.support_width == 3
          and mks.radius95 > conv.radius95 and elapsed < 60)
    _verdict(7, ok, f"MKS block support {mks.support_width} (>=13), 3x3 conv "
                    f"support {conv.support_width} (==3), 95%-mass radii "
                    f"{mks.radius95} > {conv.radius95}, {elapsed:.1f}s")


def test_criterion_8_flops_params_counter():
    # five hand-computed fixture layers: (spec, h, w, params, flops)
    fixtures = [
        (ops.ConvSpec(3, 8, (3, 3), padding=1), 32, 32,
         3 * 8 * 9 + 8, 2 * 8 * 3 * 9 * 32 * 32),
        (ops.ConvSpec(16, 16, (7, 7), dilation=2, padding=6, groups=16), 8, 8,
         16 * 49 + 16, 2 * 16 * 49 * 8 * 8),
        (ops.ConvSpec(8, 4, (1, 1)), 10, 10, 8 * 4 + 4, 2 * 4 * 8 * 10 * 10),
        (ops.ConvSpec(3, 6, (4, 4), stride=4), 16, 16,
         3 * 6 * 16 + 6, 2 * 6 * 3 * 16 * 4 * 4),
        (ops.ConvSpec(8, 8, (2, 2), stride=2), 8, 8,
         8 * 8 * 4 + 8, 2 * 8 * 8 * 4 * 4 * 4),
    ]
    from mksnet.backbone import _conv_row
    ok = True
    for spec, h, w, params, flops in fixtures:
        (_, p, f), _ = _conv_row("fix", spec, h, w)
        ok &= p == params and f == flops

    cfg = BackboneConfig(patch_kernel=2, patch_stride=2, variant="sa_ca",
                         stages=(StageConfig(1, 4, branches=2, reduction=2),))
    model = DetectionModel(cfg, seed=0)
    x = Stream(8, "x").uniform((1, 3, 8, 8), 0, 1, dtype=np.float32)
    with ops.count_macs() as box:
        model.forward(x)
    instrumented_match = 2 * box[0] == count_flops(cfg, (8, 8))
    ok &= instrumented_match

    sched = build_schedule(2, 7)
    k, d, _ = sched.entries[-1]
    span = (k - 1) * d + 1
    dw = ops.ConvSpec(32, 32, (k, k), dilation=d, padding=(k - 1) * d // 2,
                      groups=32)
    dense = ops.ConvSpec(32, 32, (span, span), padding=span // 2)
    dw_wins = dw.macs(16, 16) < dense.macs(16, 16)
    ok &= dw_wins
    _verdict(8, ok, f"5 hand fixtures exact; instrumented MACs match: "
                    f"{instrumented_match}; depthwise {2 * dw.macs(16, 16)} < "
                    f"dense-span {2 * dense.macs(16, 16)} FLOPs")


def test_criterion_9_serialization_and_determinism(tmp_path):
    cfg = BackboneConfig(patch_kernel=2, patch_stride=2, variant="sa_ca",
                         stages=(StageConfig(1, 4, branches=2, reduction=2),))
    model = DetectionModel(cfg, seed=4)
    model.forward(Stream(9, "x").uniform((1, 3, 8, 8), 0, 1, dtype=np.float32),
                  train=True)
    wpath = tmp_path / "w.mksw"
    save_weights(wpath, named_tensors(model))
    loaded = load_weights(wpath)
    wpath2 = tmp_path / "w2.mksw"
    save_weights(wpath2, loaded)
    weights_ok = wpath.read_bytes() == wpath2.read_bytes()

    arr = Stream(9, "t").uniform((2, 3, 4, 5), -1, 1)
    tpath = tmp_path / "t.mkst"
    dump_tensor(tpath, arr)
    back = load_tensor(tpath)
    tpath2 = tmp_path / "t2.mkst"
    dump_tensor(tpath2, back)
    tensor_ok = (back.tobytes() == arr.tobytes()
                 and tpath.read_bytes() == tpath2.read_bytes())

    run_cfg = RunConfig(model=cfg,
                        train=TrainConfig(epochs=2, batch=4, image_size=16,
                                          train_samples=16, val_samples=8))
    rows = []
    for _ in range(2):
        history, _ = train(run_cfg, seed=0)
        rows.append("\n".join(f"{h.epoch},{h.loss!r},{h.ap!r}" for h in history))
    csv_ok = rows[0] == rows[1]
    ok = weights_ok and tensor_ok and csv_ok
    _verdict(9, ok, f"weight/tensor round-trips bit-identical: "
                    f"{weights_ok and tensor_ok}; repeated training runs "
                    f"byte-identical metrics: {csv_ok}")
