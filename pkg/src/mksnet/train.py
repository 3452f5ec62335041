"""Training loop, ablation runner, and effective-receptive-field estimation.

Training is fully deterministic: the run seed fixes the dataset, the weight
initialization, and the batch order, so identical (config, seed) pairs give
bit-identical metric histories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .backbone import BackboneConfig, DetectionModel
from .config import RunConfig
from .layers import Module
from .metrics import ap_from_scores
from .optim import AdamW
from .rng import Stream
from .synthetic import gen_synthetic

ABLATION_VARIANTS = (("base", "Base"), ("sa", "Base+SA"),
                     ("ca", "Base+CA"), ("sa_ca", "Base+SA+CA"))


def bce_loss(logits, target):
    """Mean binary cross-entropy on logits (log-sum-exp form) and its gradient."""
    if logits.shape != target.shape:
        raise ValueError(f"shape mismatch {logits.shape} vs {target.shape}")
    n = logits.size
    # softplus(z) - t*z, with softplus(z) = max(z, 0) + log1p(exp(-|z|))
    loss = float(np.sum(np.maximum(logits, 0.0)
                        + np.log1p(np.exp(-np.abs(logits)))
                        - target * logits)) / n
    sig, _ = ops.sigmoid(logits)
    return loss, (sig - target) / n


def cosine_lr(base_lr: float, epoch: int, total_epochs: int,
              warmup: int = 0) -> float:
    """Linear warmup over the first `warmup` epochs, cosine decay after."""
    if epoch < warmup:
        return base_lr * (epoch + 1) / (warmup + 1)
    e, n = epoch - warmup, max(1, total_epochs - warmup)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * e / n))


@dataclass
class EpochStats:
    epoch: int
    loss: float
    ap: float


def evaluate_ap(model: Module, images, targets, batch: int) -> float:
    scores = []
    labels = []
    for i in range(0, len(images), batch):
        logits = model.forward(images[i:i + batch], train=False)
        scores.append(ops.sigmoid(logits)[0].ravel())
        labels.append(targets[i:i + batch].ravel())
    return ap_from_scores(np.concatenate(scores), np.concatenate(labels))


def train(cfg: RunConfig, variant: str = None, seed: int = None) -> list:
    """Train one model; returns a list of EpochStats (the metric history)."""
    tc = cfg.train
    seed = tc.seed if seed is None else seed
    model_cfg = cfg.model if variant is None else \
        BackboneConfig(cfg.model.patch_kernel, cfg.model.patch_stride,
                       cfg.model.in_channels, variant, cfg.model.stages)
    stride = model_cfg.total_stride()
    size = tc.image_size
    data = gen_synthetic(seed, tc.train_samples + tc.val_samples, size, size, stride)
    tr_x, va_x = data.images[:tc.train_samples], data.images[tc.train_samples:]
    tr_y, va_y = data.targets[:tc.train_samples], data.targets[tc.train_samples:]

    model = DetectionModel(model_cfg, seed=seed)
    opt = AdamW(model.params(), lr=tc.lr, betas=(tc.beta1, tc.beta2),
                weight_decay=tc.weight_decay)
    shuffle = Stream(seed, "batch-order")

    history = []
    for epoch in range(1, tc.epochs + 1):
        opt.lr = cosine_lr(tc.lr, epoch - 1, tc.epochs, tc.warmup)
        perm = shuffle.permutation(tc.train_samples)
        losses = []
        for i in range(0, tc.train_samples, tc.batch):
            idx = perm[i:i + tc.batch]
            logits = model.forward(tr_x[idx], train=True)
            loss, grad = bce_loss(logits, tr_y[idx])
            opt.zero_grad()
            model.backward(grad.astype(np.float32))
            opt.step()
            losses.append(loss)
        history.append(EpochStats(epoch, float(np.mean(losses)),
                                  evaluate_ap(model, va_x, va_y, tc.batch)))
    return history, model


@dataclass
class AblationReport:
    seeds: tuple
    final_ap: dict = field(default_factory=dict)      # variant name -> mean AP
    per_seed: dict = field(default_factory=dict)      # variant name -> [AP]

    def delta(self, name: str) -> float:
        return self.final_ap[name] - self.final_ap["Base"]


def ablation_run(cfg: RunConfig, seeds) -> AblationReport:
    if not seeds:
        raise ValueError("ablation needs at least one seed")
    report = AblationReport(seeds=tuple(seeds))
    for variant, name in ABLATION_VARIANTS:
        aps = []
        for seed in seeds:
            history, _ = train(cfg, variant=variant, seed=seed)
            aps.append(history[-1].ap)
        report.per_seed[name] = aps
        report.final_ap[name] = float(np.mean(aps))
    return report


@dataclass
class ErfResult:
    grad_map: np.ndarray   # (H, W), non-negative, sums to 1
    support_width: int     # max extent of nonzero gradient in either axis
    radius95: int          # smallest Chebyshev radius holding 95% of the mass


def erf_estimate(model: Module, input_shape, samples: int, seed: int) -> ErfResult:
    """Average |d out_center / d input| over random inputs.

    The probe backpropagates a unit gradient from every channel of the center
    cell of the model's output map.
    """
    b, c, h, w = input_shape
    rng = Stream(seed, "erf")
    acc = np.zeros((h, w))
    for _ in range(samples):
        x = rng.uniform(input_shape, -1.0, 1.0, dtype=np.float32)
        out = model.forward(x, train=False)
        grad = np.zeros_like(out)
        grad[:, :, out.shape[2] // 2, out.shape[3] // 2] = 1.0
        model.zero_grad()
        gx = model.backward(grad)
        acc += np.abs(gx.astype(np.float64)).sum(axis=(0, 1))
    total = acc.sum()
    if total <= 0:
        raise ValueError("zero gradient map; model output does not depend on input")
    grad_map = acc / total

    nz = np.argwhere(grad_map > grad_map.max() * 1e-12)
    height = int(nz[:, 0].max() - nz[:, 0].min() + 1)
    width = int(nz[:, 1].max() - nz[:, 1].min() + 1)

    cy, cx = h // 2, w // 2
    yy, xx = np.mgrid[0:h, 0:w]
    cheb = np.maximum(np.abs(yy - cy), np.abs(xx - cx))
    radius = 0
    for radius in range(int(cheb.max()) + 1):
        if grad_map[cheb <= radius].sum() >= 0.95:
            break
    return ErfResult(grad_map, max(height, width), radius)
