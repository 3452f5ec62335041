"""Run configuration: flat INI sections parsed with configparser.

Grammar: three sections, [model], [train], [io], each holding `key = value`
lines. Integer lists are comma separated. Every field is validated before a
run starts; violations raise ConfigError naming the field.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field

from .backbone import BackboneConfig, StageConfig, VARIANTS


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 25
    batch: int = 8
    lr: float = 4e-4
    warmup: int = 2
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.05
    image_size: int = 64
    train_samples: int = 512
    val_samples: int = 96
    seed: int = 0


@dataclass
class RunConfig:
    model: BackboneConfig = field(default_factory=BackboneConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    out_dir: str = "out"
    weights: str = ""


def _get(section, key, cast, default):
    if key not in section:
        return default
    try:
        return cast(section[key])
    except ValueError as exc:
        raise ConfigError(f"{section.name}.{key}: {exc}") from exc


def _int_list(text):
    return tuple(int(v) for v in text.split(","))


def parse_config(path=None, text=None) -> RunConfig:
    cp = configparser.ConfigParser()
    try:
        if text is not None:
            cp.read_string(text)
        elif not cp.read(path):
            raise ConfigError(f"config file not found: {path}")
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc

    for name in cp.sections():
        if name not in ("model", "train", "io"):
            raise ConfigError(f"unknown section [{name}]")

    m = cp["model"] if cp.has_section("model") else cp["DEFAULT"]
    depths = _get(m, "depths", _int_list, (1, 1))
    channels = _get(m, "channels", _int_list, (32, 64))
    if len(depths) != len(channels):
        raise ConfigError("model.depths and model.channels differ in length")
    branches = _get(m, "branches", int, 2)
    max_size = _get(m, "max_size", int, 7)
    reduction = _get(m, "reduction", int, 8)
    variant = _get(m, "variant", str, "sa_ca")
    if variant not in VARIANTS:
        raise ConfigError(f"model.variant: must be one of {VARIANTS}")
    try:
        stages = tuple(StageConfig(d, c, branches, max_size, reduction)
                       for d, c in zip(depths, channels))
        model = BackboneConfig(
            patch_kernel=_get(m, "patch_kernel", int, 4),
            patch_stride=_get(m, "patch_stride", int, 4),
            variant=variant,
            stages=stages)
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from exc

    t = cp["train"] if cp.has_section("train") else cp["DEFAULT"]
    train = TrainConfig(
        epochs=_get(t, "epochs", int, 25),
        batch=_get(t, "batch", int, 8),
        lr=_get(t, "lr", float, 4e-4),
        warmup=_get(t, "warmup", int, 2),
        beta1=_get(t, "beta1", float, 0.9),
        beta2=_get(t, "beta2", float, 0.999),
        weight_decay=_get(t, "weight_decay", float, 0.05),
        image_size=_get(t, "image_size", int, 64),
        train_samples=_get(t, "train_samples", int, 512),
        val_samples=_get(t, "val_samples", int, 96),
        seed=_get(t, "seed", int, 0))
    for key in ("epochs", "batch", "image_size", "train_samples", "val_samples"):
        if getattr(train, key) < 1:
            raise ConfigError(f"train.{key}: must be >= 1")
    if train.lr <= 0:
        raise ConfigError("train.lr: must be > 0")
    if train.warmup < 0:
        raise ConfigError("train.warmup: must be >= 0")
    if model.total_stride() > train.image_size or \
            train.image_size % model.total_stride():
        raise ConfigError(
            f"train.image_size: {train.image_size} not divisible by the model's "
            f"total stride {model.total_stride()}")

    io = cp["io"] if cp.has_section("io") else cp["DEFAULT"]
    return RunConfig(model=model, train=train,
                     out_dir=_get(io, "out_dir", str, "out"),
                     weights=_get(io, "weights", str, ""))
