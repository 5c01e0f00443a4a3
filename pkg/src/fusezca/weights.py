"""Activity maps and final per-pixel fusion weights.

A (whitened) feature stack turns into a single-channel activity map by
aggregating a vector or matrix norm over a local window, the map is
upsampled bicubically to source resolution, and two maps normalise into
ratio weights that sum to one per pixel.

Window conventions follow the literal formulas: zero padding outside the
feature map with a fixed (2t+1)^2 divisor for the l1/l2 means, and no area
divisor at all for the nuclear norm. Replicate padding is available as an
escape hatch.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import uniform_filter

from . import kernels
from .backbone import FeatureStack
from .core import Image, save_image
from .errors import DimMismatchError

DEGENERATE_EPS = 1e-12


def _stack_array(fs) -> np.ndarray:
    arr = fs.data if isinstance(fs, FeatureStack) else np.asarray(fs)
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 3:
        raise ValueError(f"feature stack must be 3-D, got {arr.ndim}-D")
    return arr


def _boxed(reduced: np.ndarray, t: int, padding: str) -> np.ndarray:
    if padding == "zero":
        out = kernels.box_mean(reduced, t)
    elif padding == "replicate":
        out = uniform_filter(reduced, size=2 * t + 1, mode="nearest")
    else:
        raise ValueError(f"unknown padding '{padding}'")
    return np.maximum(out, 0.0)


def local_l1_map(fs, t: int, padding: str = "zero") -> np.ndarray:
    """Windowed mean of the per-pixel channel l1 norm."""
    stack = _stack_array(fs)
    return _boxed(np.abs(stack).sum(axis=0), t, padding)


def local_l2_map(fs, t: int, padding: str = "zero") -> np.ndarray:
    """Windowed mean of the per-pixel channel l2 norm."""
    stack = _stack_array(fs)
    return _boxed(np.sqrt((stack * stack).sum(axis=0)), t, padding)


def local_nuclear_map(fs, t: int, padding: str = "zero") -> np.ndarray:
    """Nuclear norm of the (2t+1)^2 x C window matrix at every pixel."""
    stack = _stack_array(fs)
    if padding == "zero" or t == 0:
        return kernels.nuclear_map(stack, t)
    if padding != "replicate":
        raise ValueError(f"unknown padding '{padding}'")
    padded = np.pad(stack, ((0, 0), (t, t), (t, t)), mode="edge")
    return kernels.nuclear_map(padded, t)[t:-t, t:-t]


NORM_FUNCTIONS = {
    "l1": local_l1_map,
    "l2": local_l2_map,
    "nuclear": local_nuclear_map,
}


def _keys_cubic(x: np.ndarray) -> np.ndarray:
    """Keys cubic convolution kernel, a = -0.5."""
    ax = np.abs(x)
    near = (1.5 * ax - 2.5) * ax * ax + 1.0
    far = ((-0.5 * ax + 2.5) * ax - 4.0) * ax + 2.0
    return np.where(ax <= 1.0, near, np.where(ax < 2.0, far, 0.0))


def _axis_taps(src: int, dst: int):
    """Clamped tap indices (dst, 4) and weights (dst, 4) for one axis."""
    scale = src / dst
    u = (np.arange(dst, dtype=np.float64) + 0.5) * scale - 0.5
    base = np.floor(u)
    f = u - base
    idx = base.astype(np.int64)[:, None] + np.arange(-1, 3)
    np.clip(idx, 0, src - 1, out=idx)
    w = np.stack([_keys_cubic(1.0 + f), _keys_cubic(f),
                  _keys_cubic(1.0 - f), _keys_cubic(2.0 - f)], axis=1)
    return idx, w


def _resize_axis0(arr: np.ndarray, idx: np.ndarray,
                  w: np.ndarray) -> np.ndarray:
    # difference form around the center tap: exact for constant input and
    # for unit scale, where the outer weights are exactly zero
    g = arr[idx]
    base = g[:, 1]
    return (base
            + w[:, 0, None] * (g[:, 0] - base)
            + w[:, 2, None] * (g[:, 2] - base)
            + w[:, 3, None] * (g[:, 3] - base))


def resize_bicubic(map2d: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Bicubic resize with half-pixel centers and replicate-clamped edges.

    Matches MATLAB-style imresize upsampling (no antialias). Output is
    clamped at zero because the cubic kernel can undershoot near edges.
    """
    arr = np.asarray(map2d, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("activity map must be 2-D")
    th, tw = int(target[0]), int(target[1])
    if th < 1 or tw < 1:
        raise ValueError("target dims must be >= 1")
    idx_r, w_r = _axis_taps(arr.shape[0], th)
    out = _resize_axis0(arr, idx_r, w_r)
    idx_c, w_c = _axis_taps(arr.shape[1], tw)
    out = _resize_axis0(out.T, idx_c, w_c).T
    return np.maximum(out, 0.0)


def softmax_weights(a1: np.ndarray, a2: np.ndarray,
                    degenerate_weight: float = 0.5):
    """Per-pixel ratio weights w_k = a_k / (a1 + a2).

    Pixels where the denominator vanishes (below 1e-12) get the degenerate
    weight on both sides. Inputs must be nonnegative maps of equal shape.
    """
    a1 = np.asarray(a1, dtype=np.float64)
    a2 = np.asarray(a2, dtype=np.float64)
    if a1.shape != a2.shape:
        raise DimMismatchError(
            f"activity maps {a1.shape} and {a2.shape} differ")
    total = a1 + a2
    degenerate = total < DEGENERATE_EPS
    safe = np.where(degenerate, 1.0, total)
    w1 = np.where(degenerate, degenerate_weight, a1 / safe)
    w2 = np.where(degenerate, 1.0 - degenerate_weight, a2 / safe)
    return w1, w2


def dump_map_png(map2d: np.ndarray, path) -> None:
    """Debug dump: max-normalise a nonnegative map and save as PNG."""
    arr = np.asarray(map2d, dtype=np.float64)
    peak = arr.max()
    if peak > 0:
        arr = arr / peak
    save_image(Image(np.clip(arr, 0.0, 1.0)), path)
