"""Objective fusion-quality metrics.

All metrics are pure functions of float images in [0, 1] and are symmetric
in the two source images. Information-theoretic metrics histogram the
round-half-up 8-bit quantisation of their inputs (256 bins), matching the
8-bit heritage of the standard metric implementations.

Conventions pinned here (the usual published constants):

* Qabf / Nabf: 3x3 Sobel with replicate borders; strength ratio
  min(g, gF)/max(g, gF); orientation 1 - |a - aF|/(pi/2); sigmoids
  0.9994/(1+exp(-15(G-0.5))) and 0.9879/(1+exp(-22(A-0.8))); per-pixel
  weights are the source gradient magnitudes.
* SSIM: 11x11 Gaussian window, sigma 1.5, C1=(0.01)^2, C2=(0.03)^2 for the
  unit dynamic range, averaged over valid window positions only.
* MS-SSIM: 5 dyadic scales, exponents (0.0448, 0.2856, 0.3001, 0.2363,
  0.1333), 2x2 mean-pool between scales, contrast terms clamped at zero.
* FMI: global normalized mutual information 2I/(Ha+Hb) over min-max
  normalized feature images; features are raw pixels, blockwise 8x8
  orthonormal DCT-II magnitudes, or single-level Haar detail magnitudes.
* EPI: Pearson correlation of 3x3 four-neighbour Laplacian responses.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
from scipy.fft import dct
from scipy.ndimage import correlate

from .core import Image, ImagePair
from .errors import DegenerateInputError, DimMismatchError, TooSmallError

METRIC_COLUMNS = ("en", "mi", "qabf", "fmi_pixel", "fmi_dct", "fmi_w",
                  "nabf", "scd", "ssim_a", "ms_ssim", "epi_a")

_SOBEL_X = np.array([[-1.0, 0.0, 1.0],
                     [-2.0, 0.0, 2.0],
                     [-1.0, 0.0, 1.0]])
_SOBEL_Y = np.array([[1.0, 2.0, 1.0],
                     [0.0, 0.0, 0.0],
                     [-1.0, -2.0, -1.0]])
_LAPLACIAN = np.array([[0.0, -1.0, 0.0],
                       [-1.0, 4.0, -1.0],
                       [0.0, -1.0, 0.0]])

MS_SSIM_MIN_DIM = 176  # 11-tap window after four 2x downsamplings


def _as_gray(img) -> np.ndarray:
    arr = img.data if isinstance(img, Image) else np.asarray(img)
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D grayscale image, got {arr.ndim}-D")
    return arr


def _pair_arrays(pair) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(pair, ImagePair):
        return pair.infrared.data, pair.visible.data
    a, b = pair
    return _as_gray(a), _as_gray(b)


def _check_dims(fused, *others):
    for other in others:
        if other.shape != fused.shape:
            raise DimMismatchError(
                f"image dims differ: {fused.shape} vs {other.shape}")


def _quantize256(arr: np.ndarray) -> np.ndarray:
    return np.floor(np.clip(arr, 0.0, 1.0) * 255.0 + 0.5).astype(np.int64)


def _hist_entropy(q: np.ndarray) -> float:
    p = np.bincount(q.ravel(), minlength=256) / q.size
    nz = p > 0
    return float(-(p[nz] * np.log2(p[nz])).sum()) + 0.0


def entropy(img) -> float:
    """Shannon entropy (bits) of the 256-bin intensity histogram."""
    return _hist_entropy(_quantize256(_as_gray(img)))


def _mutual_info_pair(qa: np.ndarray, qb: np.ndarray) -> float:
    joint = np.bincount((qa * 256 + qb).ravel(), minlength=65536)
    joint = joint.reshape(256, 256) / qa.size
    pa = joint.sum(axis=1)
    pb = joint.sum(axis=0)
    nz = joint > 0
    denom = np.outer(pa, pb)
    return float((joint[nz] * np.log2(joint[nz] / denom[nz])).sum())


def mutual_information(fused, pair) -> float:
    """I(F; IR) + I(F; VIS) over joint 256-bin histograms."""
    f = _as_gray(fused)
    ir, vis = _pair_arrays(pair)
    _check_dims(f, ir, vis)
    qf = _quantize256(f)
    return (_mutual_info_pair(qf, _quantize256(ir))
            + _mutual_info_pair(qf, _quantize256(vis)))


# ----------------------------------------------------------------------
# gradient-based metrics (Qabf, Nabf)
# ----------------------------------------------------------------------

def _sobel_edges(arr: np.ndarray):
    gx = correlate(arr, _SOBEL_X, mode="nearest")
    gy = correlate(arr, _SOBEL_Y, mode="nearest")
    g = np.hypot(gx, gy)
    with np.errstate(divide="ignore", invalid="ignore"):
        ang = np.arctan(gy / gx)
    ang = np.where(np.isnan(ang), 0.0, ang)
    return g, ang


def _edge_preservation(g_src, a_src, g_fus, a_fus):
    g_hi = np.maximum(g_src, g_fus)
    g_lo = np.minimum(g_src, g_fus)
    ratio = np.divide(g_lo, g_hi, out=np.zeros_like(g_lo), where=g_hi > 0)
    orient = 1.0 - np.abs(a_src - a_fus) / (np.pi / 2.0)
    q_g = 0.9994 / (1.0 + np.exp(-15.0 * (ratio - 0.5)))
    q_a = 0.9879 / (1.0 + np.exp(-22.0 * (orient - 0.8)))
    return q_g * q_a


def _qabf_terms(fused, pair):
    f = _as_gray(fused)
    ir, vis = _pair_arrays(pair)
    _check_dims(f, ir, vis)
    g1, a1 = _sobel_edges(ir)
    g2, a2 = _sobel_edges(vis)
    gf, af = _sobel_edges(f)
    denom = float((g1 + g2).sum())
    if denom == 0.0:
        raise DegenerateInputError("both sources have zero gradient")
    q1 = _edge_preservation(g1, a1, gf, af)
    q2 = _edge_preservation(g2, a2, gf, af)
    return q1, q2, g1, g2, gf, denom


def qabf(fused, pair) -> float:
    """Gradient-transfer quality: how much source edge information the
    fused image preserves."""
    q1, q2, g1, g2, _, denom = _qabf_terms(fused, pair)
    return float((q1 * g1 + q2 * g2).sum()) / denom


def nabf(fused, pair) -> float:
    """Fusion-artifact rate: gradient information present in the fused
    image at pixels where it exceeds both sources."""
    q1, q2, g1, g2, gf, denom = _qabf_terms(fused, pair)
    artifact = (gf > g1) & (gf > g2)
    contrib = (1.0 - q1) * g1 + (1.0 - q2) * g2
    return float(contrib[artifact].sum()) / denom


# ----------------------------------------------------------------------
# correlation-based metrics (SCD, EPI)
# ----------------------------------------------------------------------

def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    da = a - a.mean()
    db = b - b.mean()
    saa = float((da * da).sum())
    sbb = float((db * db).sum())
    if saa == 0.0 or sbb == 0.0:
        return 0.0
    return float((da * db).sum()) / float(np.sqrt(saa * sbb))


def scd(fused, pair) -> float:
    """Sum of correlations of differences: r(F-VIS, IR) + r(F-IR, VIS)."""
    f = _as_gray(fused)
    ir, vis = _pair_arrays(pair)
    _check_dims(f, ir, vis)
    return _pearson(f - vis, ir) + _pearson(f - ir, vis)


def epi_a(fused, pair) -> float:
    """Mean edge preservation index: Laplacian high-pass correlation
    against each source, averaged."""
    f = _as_gray(fused)
    ir, vis = _pair_arrays(pair)
    _check_dims(f, ir, vis)
    hf = correlate(f, _LAPLACIAN, mode="nearest")
    h1 = correlate(ir, _LAPLACIAN, mode="nearest")
    h2 = correlate(vis, _LAPLACIAN, mode="nearest")
    return (_pearson(hf, h1) + _pearson(hf, h2)) * 0.5


# ----------------------------------------------------------------------
# structural similarity (SSIM, MS-SSIM)
# ----------------------------------------------------------------------

def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    win = np.outer(g, g)
    return win / win.sum()


_SSIM_WINDOW = _gaussian_window()
_SSIM_C1 = 0.01 ** 2
_SSIM_C2 = 0.03 ** 2
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


def _window_filter_valid(arr: np.ndarray) -> np.ndarray:
    out = correlate(arr, _SSIM_WINDOW, mode="constant")
    return out[5:-5, 5:-5]


def _ssim_and_cs(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    if min(a.shape) < 11:
        raise TooSmallError("SSIM needs at least 11 pixels per dimension")
    mu_a = _window_filter_valid(a)
    mu_b = _window_filter_valid(b)
    var_a = _window_filter_valid(a * a) - mu_a * mu_a
    var_b = _window_filter_valid(b * b) - mu_b * mu_b
    cov = _window_filter_valid(a * b) - mu_a * mu_b
    lum = (2.0 * mu_a * mu_b + _SSIM_C1) / (mu_a * mu_a + mu_b * mu_b
                                            + _SSIM_C1)
    cs = (2.0 * cov + _SSIM_C2) / (var_a + var_b + _SSIM_C2)
    return float((lum * cs).mean()), float(cs.mean())


def ssim(a, b) -> float:
    """Structural similarity over valid 11x11 Gaussian windows, L = 1."""
    a = _as_gray(a)
    b = _as_gray(b)
    _check_dims(a, b)
    return _ssim_and_cs(a, b)[0]


def ssim_a(fused, pair) -> float:
    """Mean SSIM against the two sources."""
    f = _as_gray(fused)
    ir, vis = _pair_arrays(pair)
    _check_dims(f, ir, vis)
    return (ssim(f, ir) + ssim(f, vis)) * 0.5


def _downsample2(arr: np.ndarray) -> np.ndarray:
    h2, w2 = arr.shape[0] // 2, arr.shape[1] // 2
    return arr[:h2 * 2, :w2 * 2].reshape(h2, 2, w2, 2).mean(axis=(1, 3))


def _ms_ssim_single(a: np.ndarray, b: np.ndarray) -> float:
    levels = len(MS_SSIM_WEIGHTS)
    score = 1.0
    for level, weight in enumerate(MS_SSIM_WEIGHTS):
        ssim_mean, cs_mean = _ssim_and_cs(a, b)
        term = ssim_mean if level == levels - 1 else cs_mean
        score *= max(term, 0.0) ** weight
        if level < levels - 1:
            a = _downsample2(a)
            b = _downsample2(b)
    return score


def ms_ssim(fused, pair) -> float:
    """Five-scale MS-SSIM against each source, averaged."""
    f = _as_gray(fused)
    ir, vis = _pair_arrays(pair)
    _check_dims(f, ir, vis)
    if min(f.shape) < MS_SSIM_MIN_DIM:
        raise TooSmallError(
            f"MS-SSIM needs at least {MS_SSIM_MIN_DIM} pixels per "
            f"dimension, got {f.shape}")
    return (_ms_ssim_single(f, ir) + _ms_ssim_single(f, vis)) * 0.5


# ----------------------------------------------------------------------
# feature mutual information (FMI)
# ----------------------------------------------------------------------

def _dct_magnitudes(arr: np.ndarray) -> np.ndarray:
    h8, w8 = arr.shape[0] // 8, arr.shape[1] // 8
    if h8 == 0 or w8 == 0:
        raise TooSmallError("DCT features need at least 8x8 images")
    blocks = arr[:h8 * 8, :w8 * 8].reshape(h8, 8, w8, 8)
    coeff = dct(dct(blocks, type=2, norm="ortho", axis=1),
                type=2, norm="ortho", axis=3)
    return np.abs(coeff).reshape(h8 * 8, w8 * 8)


def _haar_detail_magnitudes(arr: np.ndarray) -> np.ndarray:
    h2, w2 = arr.shape[0] // 2, arr.shape[1] // 2
    if h2 == 0 or w2 == 0:
        raise TooSmallError("Haar features need at least 2x2 images")
    x = arr[:h2 * 2, :w2 * 2]
    a = x[0::2, 0::2]
    b = x[0::2, 1::2]
    c = x[1::2, 0::2]
    d = x[1::2, 1::2]
    lh = (a - b + c - d) * 0.5
    hl = (a + b - c - d) * 0.5
    hh = (a - b - c + d) * 0.5
    return np.sqrt(lh * lh + hl * hl + hh * hh)


_FMI_FEATURES = {
    "pixel": lambda arr: arr,
    "dct": _dct_magnitudes,
    "wavelet": _haar_detail_magnitudes,
}


def _quantize_feature(arr: np.ndarray) -> np.ndarray:
    lo = arr.min()
    span = arr.max() - lo
    if span == 0.0:
        return np.zeros(arr.shape, dtype=np.int64)
    return np.floor((arr - lo) / span * 255.0 + 0.5).astype(np.int64)


def _nmi(a: np.ndarray, b: np.ndarray) -> float:
    qa = _quantize_feature(a)
    qb = _quantize_feature(b)
    ha = _hist_entropy(qa)
    hb = _hist_entropy(qb)
    if ha + hb == 0.0:
        return 1.0 if np.array_equal(qa, qb) else 0.0
    return 2.0 * _mutual_info_pair(qa, qb) / (ha + hb)


def fmi(fused, pair, feature: str = "pixel") -> float:
    """Feature mutual information: mean normalized MI between the fused
    image and each source after a pixel/dct/wavelet feature transform."""
    if feature not in _FMI_FEATURES:
        raise ValueError(f"unknown FMI feature '{feature}'")
    f = _as_gray(fused)
    ir, vis = _pair_arrays(pair)
    _check_dims(f, ir, vis)
    transform = _FMI_FEATURES[feature]
    ff = transform(f)
    return (_nmi(ff, transform(ir)) + _nmi(ff, transform(vis))) * 0.5


# ----------------------------------------------------------------------
# report
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class MetricReport:
    """One row of metric values; None marks a skipped metric."""

    en: float | None = None
    mi: float | None = None
    qabf: float | None = None
    fmi_pixel: float | None = None
    fmi_dct: float | None = None
    fmi_w: float | None = None
    nabf: float | None = None
    scd: float | None = None
    ssim_a: float | None = None
    ms_ssim: float | None = None
    epi_a: float | None = None

    def values(self) -> dict[str, float | None]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def status(self, name: str) -> str:
        return "computed" if getattr(self, name) is not None else "skipped"

    def csv_row(self, columns=METRIC_COLUMNS) -> list[str]:
        vals = self.values()
        return ["" if vals[c] is None else repr(vals[c]) for c in columns]


_COMPUTE = {
    "en": lambda f, p: entropy(f),
    "mi": mutual_information,
    "qabf": qabf,
    "fmi_pixel": lambda f, p: fmi(f, p, "pixel"),
    "fmi_dct": lambda f, p: fmi(f, p, "dct"),
    "fmi_w": lambda f, p: fmi(f, p, "wavelet"),
    "nabf": nabf,
    "scd": scd,
    "ssim_a": ssim_a,
    "ms_ssim": ms_ssim,
    "epi_a": epi_a,
}


def compute_report(fused, pair, only=None) -> MetricReport:
    """Compute the metric suite; metrics whose preconditions fail (image
    too small for their transform) are skipped, not errors."""
    names = METRIC_COLUMNS if only is None else tuple(only)
    unknown = [n for n in names if n not in _COMPUTE]
    if unknown:
        raise ValueError(f"unknown metrics: {', '.join(unknown)}")
    out: dict[str, float | None] = {}
    for name in names:
        try:
            out[name] = _COMPUTE[name](fused, pair)
        except TooSmallError:
            out[name] = None
    return MetricReport(**out)
