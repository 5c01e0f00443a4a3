"""End-to-end fusion pipeline and weighted-average reconstruction."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .backbone import BackboneSession
from .core import FusionConfig, Image, ImagePair
from .errors import DimMismatchError, PipelineStageError
from .weights import NORM_FUNCTIONS, resize_bicubic, softmax_weights
from .whitening import whiten_stack


@dataclass(frozen=True)
class FusionResult:
    """Fused image, the weight maps that produced it, and per-stage times."""

    fused: Image
    weight_maps: tuple[np.ndarray, np.ndarray]
    config: FusionConfig
    timings: dict[str, float]


def reconstruct(pair: ImagePair, w1: np.ndarray, w2: np.ndarray) -> Image:
    """Weighted average of the two sources, clamped to [0, 1].

    Weights must match the source dimensions and sum to one per pixel; the
    clamp only guards round-off, it never engages for convex weights.
    """
    w1 = np.asarray(w1, dtype=np.float64)
    w2 = np.asarray(w2, dtype=np.float64)
    if w1.shape != pair.shape or w2.shape != pair.shape:
        raise DimMismatchError(
            f"weight maps {w1.shape}/{w2.shape} do not match sources "
            f"{pair.shape}")
    fused = w1 * pair.infrared.data + w2 * pair.visible.data
    return Image(np.clip(fused, 0.0, 1.0))


class _StageClock:
    def __init__(self):
        self.timings: dict[str, float] = {}

    def run(self, stage: str, fn, *args, **kwargs):
        start = time.perf_counter()
        try:
            result = fn(*args, **kwargs)
        except Exception as e:
            raise PipelineStageError(stage, e) from e
        self.timings[stage] = time.perf_counter() - start
        return result


def fuse_pair(pair: ImagePair, cfg: FusionConfig,
              session: BackboneSession,
              features: tuple | None = None) -> FusionResult:
    """Run the full pipeline on one preregistered pair.

    ``features`` optionally injects pre-extracted (infrared, visible)
    feature stacks for cfg.block_id, letting a batch run extract once and
    reuse across configurations.
    """
    clock = _StageClock()

    if features is None:
        f_ir, f_vis = clock.run(
            "extract", lambda: (session.extract(pair.infrared, cfg.block_id),
                                session.extract(pair.visible, cfg.block_id)))
    else:
        f_ir, f_vis = features

    if cfg.zca_enabled:
        f_ir, f_vis = clock.run(
            "whiten", lambda: (whiten_stack(f_ir, cfg.epsilon),
                               whiten_stack(f_vis, cfg.epsilon)))

    norm_fn = NORM_FUNCTIONS[cfg.norm_kind]
    a_ir, a_vis = clock.run(
        "activity", lambda: (norm_fn(f_ir, cfg.window_radius),
                             norm_fn(f_vis, cfg.window_radius)))

    r_ir, r_vis = clock.run(
        "resize", lambda: (resize_bicubic(a_ir, pair.shape),
                           resize_bicubic(a_vis, pair.shape)))

    w_ir, w_vis = clock.run(
        "weights", softmax_weights, r_ir, r_vis, cfg.degenerate_weight)

    fused = clock.run("reconstruct", reconstruct, pair, w_ir, w_vis)

    return FusionResult(fused=fused, weight_maps=(w_ir, w_vis),
                        config=cfg, timings=clock.timings)
