"""Infrared/visible image fusion from ZCA-whitened deep CNN features.

Pipeline: extract per-block deep features from both sources with a fixed
pretrained backbone, whiten each channel (ZCA), aggregate a local norm into
activity maps, upsample them bicubically, normalise into per-pixel ratio
weights, and reconstruct the fused image as the weighted average. A metric
suite and a batch harness score the results.
"""

from .core import FusionConfig, Image, ImagePair, load_image, save_image
from .fusion import FusionResult, fuse_pair, reconstruct
from .metrics import MetricReport, compute_report

__version__ = "0.1.0"

__all__ = [
    "FusionConfig",
    "FusionResult",
    "Image",
    "ImagePair",
    "MetricReport",
    "compute_report",
    "fuse_pair",
    "load_image",
    "reconstruct",
    "save_image",
    "__version__",
]
