"""Synthetic small-blob detection task.

Each 3xHxW image is low-frequency clutter plus small bright blobs, designed so
that the two attention mechanisms address two distinct, planted difficulties:

- Spatial context: target and confuser blobs have identical core appearance;
  only targets carry a faint halo ring at radius ~7-9 px, so telling them
  apart requires integrating a neighborhood far wider than the blob itself --
  the regime large-kernel spatial attention serves.
- Global channel context: each image has one informative color channel,
  flagged by a brighter clutter distribution. True rings and over-bright
  cores render only in that channel, while every confuser carries the same
  signature in a different channel. Deciding which channel to trust is a
  global, per-image judgement -- exactly what pooled channel gates provide --
  while any single patch leaves the flag ambiguous.

The label is a per-cell presence map at the detector's output stride: a cell
is 1 iff a target blob center falls in it. Every sample is a pure function of
(seed, index).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import Stream

MAX_BLOBS = 4
RING_RADIUS = (7.0, 9.0)


@dataclass
class SyntheticBatch:
    images: np.ndarray       # (N, 3, H, W) float32 in [0, 1]
    targets: np.ndarray      # (N, 1, H/stride, W/stride) float32 in {0, 1}
    blob_counts: np.ndarray  # (N,) int


def _upsample_bilinear(coarse, h, w):
    ch, cw = coarse.shape
    ys = np.linspace(0, ch - 1, h)
    xs = np.linspace(0, cw - 1, w)
    y0 = np.clip(ys.astype(int), 0, ch - 2)
    x0 = np.clip(xs.astype(int), 0, cw - 2)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    a = coarse[y0][:, x0]
    b = coarse[y0][:, x0 + 1]
    c = coarse[y0 + 1][:, x0]
    d = coarse[y0 + 1][:, x0 + 1]
    return a * (1 - fy) * (1 - fx) + b * (1 - fy) * fx + c * fy * (1 - fx) + d * fy * fx


def _add_blob(img, cy, cx, sigma, amp, tint):
    h, w = img.shape[1:]
    r = max(2, int(np.ceil(3 * sigma)))
    y0, y1 = max(0, int(cy) - r), min(h, int(cy) + r + 1)
    x0, x1 = max(0, int(cx) - r), min(w, int(cx) + r + 1)
    yy, xx = np.mgrid[y0:y1, x0:x1]
    profile = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma ** 2))
    for ch in range(3):
        img[ch, y0:y1, x0:x1] += amp * tint[ch] * profile


def _add_ring(img, cy, cx, radius, thickness, amp, channel):
    h, w = img.shape[1:]
    r = int(np.ceil(radius + 3 * thickness))
    y0, y1 = max(0, int(cy) - r), min(h, int(cy) + r + 1)
    x0, x1 = max(0, int(cx) - r), min(w, int(cx) + r + 1)
    yy, xx = np.mgrid[y0:y1, x0:x1]
    dist = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
    img[channel, y0:y1, x0:x1] += amp * np.exp(
        -((dist - radius) ** 2) / (2 * thickness ** 2))


def _place(rng, h, w, taken, margin=10.0, min_dist=14.0, tries=20):
    """Draw a center away from the border and from previously placed blobs.
    Deterministic: consumes a data-dependent but reproducible number of draws."""
    cy = cx = margin
    for _ in range(tries):
        cy, cx = margin + rng.uniform((2,), 0, 1) * [h - 1 - 2 * margin,
                                                     w - 1 - 2 * margin]
        if all((cy - ty) ** 2 + (cx - tx) ** 2 >= min_dist ** 2
               for ty, tx in taken):
            break
    taken.append((cy, cx))
    return float(cy), float(cx)


def make_sample(seed: int, index: int, h: int, w: int, stride: int):
    """Returns (image (3,h,w), target (1,h//stride,w//stride), target count)."""
    if h % stride or w % stride:
        raise ValueError(f"image size {h}x{w} not divisible by stride {stride}")
    rng = Stream(seed, f"sample{index}")

    # clutter is a smooth whole-image gradient drawn independently per
    # channel (2x2 control points, correlation length ~ the image size), so
    # any local window sees a single arbitrary per-channel baseline. The
    # informative channel is flagged by drawing its clutter from the upper
    # half of the same range: every local baseline it produces is also
    # plausible for the other channels, so the flag is ambiguous from any
    # one patch, yet the whole-image mean reads it reliably.
    coarse = rng.uniform((3, 2, 2), 0.15, 0.55)
    c_star = int(rng.integers((), 0, 2))
    coarse[c_star] = 0.35 + (coarse[c_star] - 0.15) * 0.5
    img = np.stack([_upsample_bilinear(c, h, w) for c in coarse])
    img += rng.uniform((3, h, w), -0.04, 0.04)

    # dim, wide smudges: generic clutter
    for _ in range(int(rng.integers((), 2, 4))):
        cy, cx = rng.uniform((2,), 0, 1) * [h - 1, w - 1]
        _add_blob(img, float(cy), float(cx), float(rng.uniform((), 1.5, 3.0)),
                  float(rng.uniform((), 0.10, 0.22)), rng.uniform((3,), 0.5, 1.0))

    taken = []

    # confusers mimic the full target signature (over-bright channel + halo
    # ring) in a non-informative channel: targets and confusers differ only
    # by WHICH channel carries the cue
    for _ in range(int(rng.integers((), 2, 4))):
        cy, cx = _place(rng, h, w, taken)
        tint = rng.uniform((3,), 0.85, 1.0)
        decoy = (c_star + 1 + int(rng.integers((), 0, 1))) % 3
        tint[decoy] = float(rng.uniform((), 1.15, 1.3))
        _add_blob(img, cy, cx, float(rng.uniform((), 0.7, 1.1)),
                  float(rng.uniform((), 0.5, 0.8)), tint)
        _add_ring(img, cy, cx, float(rng.uniform((), *RING_RADIUS)), 1.2,
                  float(rng.uniform((), 0.14, 0.22)), decoy)

    # targets: the same bright core plus a faint ring in the informative
    # channel only
    n_blobs = int(rng.integers((), 0, MAX_BLOBS))
    target = np.zeros((1, h // stride, w // stride), dtype=np.float32)
    for _ in range(n_blobs):
        cy, cx = _place(rng, h, w, taken)
        tint = rng.uniform((3,), 0.85, 1.0)
        # second cue: target cores are over-bright in the informative channel,
        # a local feature whose meaning depends on the global flag
        tint[c_star] = float(rng.uniform((), 1.15, 1.3))
        _add_blob(img, cy, cx, float(rng.uniform((), 0.7, 1.1)),
                  float(rng.uniform((), 0.5, 0.8)), tint)
        _add_ring(img, cy, cx, float(rng.uniform((), *RING_RADIUS)), 1.2,
                  float(rng.uniform((), 0.14, 0.22)), c_star)
        target[0, int(cy) // stride, int(cx) // stride] = 1.0

    return np.clip(img, 0.0, 1.0).astype(np.float32), target, n_blobs


def gen_synthetic(seed: int, count: int, h: int, w: int, stride: int) -> SyntheticBatch:
    images = np.empty((count, 3, h, w), dtype=np.float32)
    targets = np.empty((count, 1, h // stride, w // stride), dtype=np.float32)
    counts = np.empty(count, dtype=np.int64)
    for i in range(count):
        images[i], targets[i], counts[i] = make_sample(seed, i, h, w, stride)
    return SyntheticBatch(images, targets, counts)
