"""Domain types and grayscale image I/O.

Images are immutable 2-D float64 rasters in [0, 1]; all fusion math runs in
float64 because the whitening step inverts (Sigma + eps*I)^(1/2), which is
precision sensitive. 8-bit output quantisation uses round-half-up so the
same input produces the same bytes on every platform.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image as PilImage
from PIL import UnidentifiedImageError

from .errors import (
    ConfigError,
    DimMismatchError,
    EmptyImageError,
    FormatError,
    ImageIOError,
)

# ITU-R BT.601 luma weights for RGB inputs
_LUMA = np.array([0.299, 0.587, 0.114])

BACKBONES = ("resnet50", "resnet101", "vgg19")

VALID_BLOCKS = {
    "resnet50": ("conv1", "conv2", "conv3", "conv4", "conv5"),
    "resnet101": ("conv1", "conv2", "conv3", "conv4", "conv5"),
    "vgg19": ("relu1_1", "relu2_1", "relu3_1", "relu4_1"),
}

NORM_KINDS = ("l1", "l2", "nuclear")


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Image:
    """Immutable grayscale raster, row-major float64 intensities in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise FormatError(f"image data must be 2-D, got {arr.ndim}-D")
        if arr.size == 0:
            raise EmptyImageError("image has a zero dimension")
        if not np.all(np.isfinite(arr)):
            raise FormatError("image contains non-finite samples")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise FormatError("image samples must lie in [0, 1]")
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


@dataclass(frozen=True)
class ImagePair:
    """A preregistered infrared/visible pair; both images share dimensions."""

    infrared: Image
    visible: Image

    def __post_init__(self):
        if self.infrared.shape != self.visible.shape:
            raise DimMismatchError(
                f"infrared {self.infrared.shape} and visible "
                f"{self.visible.shape} dimensions differ")

    @property
    def shape(self) -> tuple[int, int]:
        return self.infrared.shape


@dataclass(frozen=True)
class FusionConfig:
    """Full descriptor of one fusion run."""

    backbone_id: str = "resnet50"
    block_id: str = "conv5"
    norm_kind: str = "l1"
    zca_enabled: bool = True
    window_radius: int = 2
    epsilon: float = 1e-5
    degenerate_weight: float = 0.5

    def __post_init__(self):
        if self.backbone_id not in VALID_BLOCKS:
            raise ConfigError(f"unknown backbone '{self.backbone_id}'")
        if self.block_id not in VALID_BLOCKS[self.backbone_id]:
            raise ConfigError(
                f"invalid block '{self.block_id}' for backbone "
                f"'{self.backbone_id}' (valid: "
                f"{', '.join(VALID_BLOCKS[self.backbone_id])})")
        if self.norm_kind not in NORM_KINDS:
            raise ConfigError(f"unknown norm '{self.norm_kind}'")
        if self.window_radius < 0:
            raise ConfigError("window radius must be >= 0")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be > 0")

    @property
    def slug(self) -> str:
        """Directory/row key: <backbone>-<block>-<norm>-<zca|nozca>."""
        zca = "zca" if self.zca_enabled else "nozca"
        return f"{self.backbone_id}-{self.block_id}-{self.norm_kind}-{zca}"


def load_image(path: str | os.PathLike) -> Image:
    """Load an 8/16-bit grayscale or RGB raster as a normalized Image.

    RGB inputs are reduced to luma with BT.601 weights. Raises ImageIOError
    if the file is missing or unreadable, FormatError if it cannot be
    decoded, EmptyImageError on zero-sized rasters.
    """
    try:
        fh = open(path, "rb")
    except OSError as e:
        raise ImageIOError(f"cannot open image '{path}': {e}") from e
    with fh:
        try:
            with PilImage.open(fh) as im:
                im.load()
                arr = _decode(im)
        except (UnidentifiedImageError, OSError, SyntaxError) as e:
            raise FormatError(f"cannot decode image '{path}': {e}") from e
    if arr.size == 0:
        raise EmptyImageError(f"image '{path}' has a zero dimension")
    return Image(arr)


def _decode(im: PilImage.Image) -> np.ndarray:
    mode = im.mode
    if mode in ("P", "PA", "RGBA", "LA"):
        im = im.convert("RGB")
        mode = "RGB"
    if mode == "L":
        return np.asarray(im, dtype=np.float64) / 255.0
    if mode in ("I;16", "I;16B", "I;16L"):
        return np.asarray(im, dtype=np.float64) / 65535.0
    if mode == "I":
        arr = np.asarray(im, dtype=np.float64)
        return np.clip(arr / 65535.0, 0.0, 1.0)
    if mode == "RGB":
        rgb = np.asarray(im, dtype=np.float64) / 255.0
        return rgb @ _LUMA
    raise FormatError(f"unsupported image mode '{mode}'")


def quantize_u8(data: np.ndarray) -> np.ndarray:
    """Map [0, 1] floats to bytes with round-half-up."""
    return np.floor(np.clip(data, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def save_image(img: Image, path: str | os.PathLike) -> None:
    """Write an 8-bit grayscale PNG; quantization is round(v * 255) half-up."""
    data = quantize_u8(img.data)
    try:
        PilImage.fromarray(data, mode="L").save(path, format="PNG")
    except OSError as e:
        raise ImageIOError(f"cannot write image '{path}': {e}") from e
