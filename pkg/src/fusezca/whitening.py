"""Per-channel ZCA whitening of deep feature stacks.

Each channel F (fh x fw) gets its own row-Gram matrix Co = F F^T, decomposed
as Co = U diag(sigma) U^T; the whitening operator is
s = U diag((sigma + eps)^(-1/2)) U^T and the whitened channel is s F. The
Gram matrix is deliberately not mean-centered and not normalized by the
sample count; an optional ``center`` flag subtracts row means for
experimentation.

The decomposition runs as a symmetric eigendecomposition rather than a
general SVD: equivalent for symmetric PSD input and more stable. Round-off
can push small eigenvalues slightly negative, so they are clamped to zero
before eps is added.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backbone import FeatureStack
from .errors import NumericalError

_SYM_TOL = 1e-8


@dataclass(frozen=True)
class ZcaTransform:
    """Symmetric whitening operator for one channel."""

    matrix: np.ndarray
    epsilon: float


def channel_covariance(channel: np.ndarray, center: bool = False) -> np.ndarray:
    """Row-Gram matrix Co = F F^T of one fh x fw channel.

    With ``center=True`` the row means are subtracted first (textbook ZCA);
    the default follows the uncentered form used for the fusion pipeline.
    """
    f = np.asarray(channel, dtype=np.float64)
    if f.ndim != 2:
        raise ValueError(f"channel must be 2-D, got {f.ndim}-D")
    if center:
        f = f - f.mean(axis=1, keepdims=True)
    return f @ f.T


def zca_transform(co: np.ndarray, epsilon: float) -> ZcaTransform:
    """Whitening operator U (Sigma + eps I)^(-1/2) U^T from a Gram matrix.

    ``co`` must be symmetric PSD up to round-off. ``epsilon`` may be zero
    only if the spectrum is strictly positive.
    """
    co = np.asarray(co, dtype=np.float64)
    if co.ndim != 2 or co.shape[0] != co.shape[1]:
        raise ValueError("covariance must be square")
    if not np.allclose(co, co.T, atol=_SYM_TOL, rtol=0.0):
        raise ValueError("covariance must be symmetric within 1e-8")
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    try:
        eigvals, eigvecs = np.linalg.eigh(co)
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"eigendecomposition failed: {e}") from e
    eigvals = np.maximum(eigvals, 0.0)
    shifted = eigvals + epsilon
    if np.any(shifted <= 0.0):
        raise NumericalError(
            "singular covariance with epsilon=0; whitening undefined")
    s = (eigvecs * shifted ** -0.5) @ eigvecs.T
    s = 0.5 * (s + s.T)
    return ZcaTransform(matrix=s, epsilon=float(epsilon))


def whiten_channel(channel: np.ndarray, epsilon: float,
                   center: bool = False) -> np.ndarray:
    """Whiten a single channel: s F with s from its own Gram matrix."""
    t = zca_transform(channel_covariance(channel, center=center), epsilon)
    return t.matrix @ np.asarray(channel, dtype=np.float64)


def whiten_stack(fs: FeatureStack, epsilon: float,
                 center: bool = False) -> FeatureStack:
    """Whiten every channel of a feature stack independently.

    All channels share fh, so the eigendecompositions are batched into one
    LAPACK call; results match the per-channel path bit for bit.
    """
    f = fs.data
    if center:
        f = f - f.mean(axis=2, keepdims=True)
    co = f @ f.transpose(0, 2, 1)
    try:
        eigvals, eigvecs = np.linalg.eigh(co)
    except np.linalg.LinAlgError:
        _raise_tagged(co, epsilon)
    eigvals = np.maximum(eigvals, 0.0)
    shifted = eigvals + epsilon
    if np.any(shifted <= 0.0):
        bad = int(np.argmax(np.any(shifted <= 0.0, axis=1)))
        raise NumericalError(
            f"channel {bad}: singular covariance with epsilon=0")
    s = (eigvecs * shifted[:, None, :] ** -0.5) @ eigvecs.transpose(0, 2, 1)
    s = 0.5 * (s + s.transpose(0, 2, 1))
    whitened = s @ f
    return fs.with_data(whitened)


def _raise_tagged(co: np.ndarray, epsilon: float):
    """Re-run channel by channel to name the one that failed."""
    for j in range(co.shape[0]):
        try:
            zca_transform(co[j], epsilon)
        except NumericalError as e:
            raise NumericalError(f"channel {j}: {e}") from e
    raise NumericalError("batched eigendecomposition failed")
