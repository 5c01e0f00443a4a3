"""Numpy implementations of the hot spatial kernels.

Same contracts as the compiled module in ``_native.pyx``; used when the
extension is not built. The nuclear-norm kernel batches one output row of
window matrices per LAPACK call to stay usable at feature-map scale.
"""

import numpy as np
from scipy.ndimage import uniform_filter

from ..errors import NumericalError


def box_mean(arr: np.ndarray, t: int) -> np.ndarray:
    """Mean over a (2t+1)x(2t+1) window, zero padded, fixed divisor."""
    if t == 0:
        return arr.copy()
    return uniform_filter(arr, size=2 * t + 1, mode="constant", cval=0.0)


def nuclear_map(stack: np.ndarray, t: int) -> np.ndarray:
    """Per-pixel nuclear norm of the (2t+1)^2 x C window matrix.

    Windows extending past the border are zero filled. No division by the
    window area.
    """
    c, fh, fw = stack.shape
    w = 2 * t + 1
    padded = np.zeros((c, fh + 2 * t, fw + 2 * t), dtype=np.float64)
    padded[:, t:t + fh, t:t + fw] = stack
    # (c, fh, fw, w, w) view; no copy
    win = np.lib.stride_tricks.sliding_window_view(padded, (w, w), axis=(1, 2))
    out = np.empty((fh, fw), dtype=np.float64)
    for y in range(fh):
        mats = win[:, y].transpose(1, 2, 3, 0).reshape(fw, w * w, c)
        try:
            sv = np.linalg.svd(mats, compute_uv=False)
        except np.linalg.LinAlgError:
            x = _find_svd_failure(mats)
            raise NumericalError(f"SVD did not converge at pixel ({y}, {x})")
        out[y] = sv.sum(axis=1)
    return out


def _find_svd_failure(mats: np.ndarray) -> int:
    for x in range(mats.shape[0]):
        try:
            np.linalg.svd(mats[x], compute_uv=False)
        except np.linalg.LinAlgError:
            return x
    return -1
