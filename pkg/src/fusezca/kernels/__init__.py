"""Hot spatial kernels, compiled when available.

``box_mean`` and ``nuclear_map`` dispatch to the Cython extension if it was
built, otherwise to the numpy fallback. Both backends share one contract;
``implementations()`` exposes them side by side for tests and benchmarks.
"""

import numpy as np

from . import _fallback

try:
    from . import _native
except ImportError:  # extension not built
    _native = None

HAVE_NATIVE = _native is not None
BACKEND = "cython" if HAVE_NATIVE else "numpy"
_impl = _native if HAVE_NATIVE else _fallback


def _as_c64(arr, ndim):
    out = np.ascontiguousarray(arr, dtype=np.float64)
    if out.ndim != ndim:
        raise ValueError(f"expected a {ndim}-D array, got {out.ndim}-D")
    return out


def box_mean(arr, t: int) -> np.ndarray:
    """Windowed mean with zero padding and fixed (2t+1)^2 divisor."""
    if t < 0:
        raise ValueError("window radius must be >= 0")
    return _impl.box_mean(_as_c64(arr, 2), t)


def nuclear_map(stack, t: int) -> np.ndarray:
    """Per-pixel nuclear norm over zero-padded (2t+1)^2 x C windows."""
    if t < 0:
        raise ValueError("window radius must be >= 0")
    return _impl.nuclear_map(_as_c64(stack, 3), t)


def implementations():
    """Name -> module map of every available backend."""
    impls = {"numpy": _fallback}
    if HAVE_NATIVE:
        impls["cython"] = _native
    return impls
