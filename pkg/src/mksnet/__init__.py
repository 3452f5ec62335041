"""Multi-kernel selection attention library.

NCHW numpy operators with explicit backward passes, spatial/channel attention
blocks, a small backbone, AP evaluation, and a deterministic training harness.
Convolution kernels run under numba when available; set MKSNET_BACKEND=numpy
to force the pure-numpy path.
"""

from .attention import CAModule, KernelSchedule, MKSBlock, SAModule, build_schedule
from .backbone import (Backbone, BackboneConfig, DetectionModel, StageConfig,
                       count_flops, count_params)
from .metrics import APResult, PRPoint, average_precision, mean_ap, pr_curve
from .ops import ConvSpec

__all__ = [
    "APResult", "Backbone", "BackboneConfig", "CAModule", "ConvSpec",
    "DetectionModel", "KernelSchedule", "MKSBlock", "PRPoint", "SAModule",
    "StageConfig", "average_precision", "build_schedule", "count_flops",
    "count_params", "mean_ap", "pr_curve",
]

__version__ = "0.1.0"
