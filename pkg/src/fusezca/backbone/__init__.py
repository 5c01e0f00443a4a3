"""Pretrained-backbone loading and per-block deep feature extraction.

A backbone is an ONNX graph plus a descriptor that pins which graph tensor
each block name maps to and how images must be preprocessed. Inference
prefers onnxruntime when it is installed and otherwise falls back to the
bundled numpy executor, which runs the same graph file.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from ..core import VALID_BLOCKS, Image
from ..errors import (
    ConfigError,
    InferenceError,
    MissingTensorError,
    ModelLoadError,
    ShapeError,
)

MODEL_DIR_ENV = "FUSEZCA_MODEL_DIR"

#: classic ImageNet RGB means, matching the MATLAB-era pretrained weights
IMAGENET_MEANS = (123.68, 116.779, 103.939)


@dataclass(frozen=True)
class PreprocessSpec:
    """How an image becomes the backbone's input tensor."""

    target_range: float = 255.0
    channel_means: tuple[float, float, float] = IMAGENET_MEANS
    replicate_gray_to_rgb: bool = True

    def __post_init__(self):
        means = tuple(float(m) for m in self.channel_means)
        if len(means) != 3 or not all(np.isfinite(means)):
            raise ConfigError("channel_means must be 3 finite floats")
        object.__setattr__(self, "channel_means", means)


@dataclass(frozen=True)
class FeatureStack:
    """C x fh x fw activations of one block for one source image."""

    data: np.ndarray
    block_id: str
    source_dims: tuple[int, int]

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3:
            raise ValueError(f"feature stack must be 3-D, got {arr.ndim}-D")
        if not np.all(np.isfinite(arr)):
            raise ValueError("feature stack contains non-finite values")
        sh, sw = self.source_dims
        if arr.shape[1] > sh or arr.shape[2] > sw:
            raise ValueError(
                f"feature dims {arr.shape[1:]} exceed source dims "
                f"{self.source_dims}")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "source_dims", (int(sh), int(sw)))

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def fh(self) -> int:
        return self.data.shape[1]

    @property
    def fw(self) -> int:
        return self.data.shape[2]

    def with_data(self, data: np.ndarray) -> "FeatureStack":
        """Same block/source metadata around new channel values."""
        return FeatureStack(data=data, block_id=self.block_id,
                            source_dims=self.source_dims)


@dataclass(frozen=True)
class BackboneDescriptor:
    """Pins a model file, its block output tensor names, and preprocessing."""

    backbone_id: str
    model_path: str | os.PathLike
    block_outputs: dict[str, str] = field(default_factory=dict)
    preprocess: PreprocessSpec = PreprocessSpec()

    def __post_init__(self):
        if self.backbone_id not in VALID_BLOCKS:
            raise ConfigError(f"unknown backbone '{self.backbone_id}'")
        missing = [b for b in VALID_BLOCKS[self.backbone_id]
                   if b not in self.block_outputs]
        if missing:
            raise ConfigError(
                f"descriptor for '{self.backbone_id}' lacks block outputs "
                f"for: {', '.join(missing)}")


def default_descriptor(backbone_id: str,
                       model_dir: str | os.PathLike | None = None
                       ) -> BackboneDescriptor:
    """Packaged descriptor for one of the stock backbones.

    ``model_dir`` defaults to the FUSEZCA_MODEL_DIR environment variable,
    then to ``./models``.
    """
    if backbone_id not in VALID_BLOCKS:
        raise ConfigError(f"unknown backbone '{backbone_id}'")
    if model_dir is None:
        model_dir = os.environ.get(MODEL_DIR_ENV, "models")
    ref = resources.files(__package__).joinpath("data", f"{backbone_id}.json")
    spec = json.loads(ref.read_text("utf-8"))
    return _descriptor_from_dict(spec, Path(model_dir))


def descriptor_from_json(path: str | os.PathLike,
                         model_dir: str | os.PathLike | None = None
                         ) -> BackboneDescriptor:
    """Load a user descriptor file; relative model paths resolve against
    ``model_dir`` or the descriptor's own directory."""
    path = Path(path)
    try:
        spec = json.loads(path.read_text("utf-8"))
    except OSError as e:
        raise ModelLoadError(f"cannot read descriptor '{path}': {e}") from e
    except json.JSONDecodeError as e:
        raise ModelLoadError(f"invalid descriptor '{path}': {e}") from e
    base = Path(model_dir) if model_dir is not None else path.parent
    return _descriptor_from_dict(spec, base)


def _descriptor_from_dict(spec: dict, base: Path) -> BackboneDescriptor:
    pp = spec.get("preprocess", {})
    preprocess = PreprocessSpec(
        target_range=pp.get("target_range", 255.0),
        channel_means=tuple(pp.get("channel_means", IMAGENET_MEANS)),
        replicate_gray_to_rgb=pp.get("replicate_gray_to_rgb", True),
    )
    model_path = Path(spec["model_file"])
    if not model_path.is_absolute():
        model_path = base / model_path
    return BackboneDescriptor(
        backbone_id=spec["backbone_id"],
        model_path=model_path,
        block_outputs=dict(spec["block_outputs"]),
        preprocess=preprocess,
    )


def preprocess_image(img: Image, spec: PreprocessSpec) -> np.ndarray:
    """Image -> (1, 3, h, w) float32 network input."""
    x = img.data * spec.target_range
    if spec.replicate_gray_to_rgb:
        planes = np.stack([x - m for m in spec.channel_means])
    else:
        planes = (x - float(np.mean(spec.channel_means)))[None]
    return planes[None].astype(np.float32)


class BackboneSession:
    """One loaded backbone; confine each instance to a single worker."""

    def __init__(self, descriptor: BackboneDescriptor, engine, engine_name):
        self.descriptor = descriptor
        self._engine = engine
        self.engine_name = engine_name

    @property
    def backbone_id(self) -> str:
        return self.descriptor.backbone_id

    @property
    def available_blocks(self) -> tuple[str, ...]:
        return tuple(self.descriptor.block_outputs)

    def extract(self, img: Image, block_id: str) -> FeatureStack:
        return self.extract_many(img, [block_id])[block_id]

    def extract_many(self, img: Image,
                     block_ids) -> dict[str, FeatureStack]:
        """All requested blocks from a single forward pass."""
        tensors = []
        for block_id in block_ids:
            name = self.descriptor.block_outputs.get(block_id)
            if name is None:
                raise ConfigError(
                    f"block '{block_id}' not declared for backbone "
                    f"'{self.backbone_id}'")
            tensors.append(name)
        x = preprocess_image(img, self.descriptor.preprocess)
        try:
            outputs = self._engine.run(tensors, x)
        except InferenceError:
            raise
        except Exception as e:
            raise InferenceError(f"forward pass failed: {e}") from e
        stacks = {}
        for block_id, out in zip(block_ids, outputs):
            out = np.asarray(out)
            if out.ndim != 4 or out.shape[0] != 1:
                raise ShapeError(
                    f"block '{block_id}' output has shape {out.shape}; "
                    "expected a 4-D single-batch tensor")
            stacks[block_id] = FeatureStack(
                data=out[0].astype(np.float64),
                block_id=block_id,
                source_dims=(img.height, img.width),
            )
        return stacks


class _NumpyEngine:
    def __init__(self, model_path):
        from .runtime import NumpyGraphRuntime
        from .onnx_proto import load_model

        self._graph = load_model(model_path)
        if not self._graph.inputs:
            raise ModelLoadError(f"model '{model_path}' declares no input")
        self._input = self._graph.inputs[0]
        self._runtime = NumpyGraphRuntime(self._graph)
        self.tensor_names = set(self._runtime.tensor_names)

    def run(self, tensors, x):
        return self._runtime.run(list(tensors), {self._input: x})


class _OrtEngine:
    def __init__(self, model_path):
        import onnxruntime as ort

        opts = ort.SessionOptions()
        opts.intra_op_num_threads = 1
        opts.inter_op_num_threads = 1
        self._session = ort.InferenceSession(
            str(model_path), sess_options=opts, providers=["CPUExecutionProvider"])
        self._input = self._session.get_inputs()[0].name
        self.tensor_names = {o.name for o in self._session.get_outputs()}

    def run(self, tensors, x):
        return self._session.run(list(tensors), {self._input: x})


def _have_onnxruntime() -> bool:
    try:
        import onnxruntime  # noqa: F401
    except ImportError:
        return False
    return True


def load_backbone(descriptor: BackboneDescriptor,
                  engine: str = "auto") -> BackboneSession:
    """Open a model file and return an inference session for its blocks.

    ``engine`` is "auto" (onnxruntime when installed, else the bundled
    numpy executor), "onnxruntime", or "numpy".
    """
    path = Path(descriptor.model_path)
    if not path.is_file():
        raise ModelLoadError(
            f"model file '{path}' not found; fetch models first "
            f"(scripts/fetch_models.py) or set --model-dir/{MODEL_DIR_ENV}")
    if engine == "auto":
        engine = "onnxruntime" if _have_onnxruntime() else "numpy"
    if engine == "onnxruntime":
        eng = _OrtEngine(path)
    elif engine == "numpy":
        eng = _NumpyEngine(path)
    else:
        raise ConfigError(f"unknown engine '{engine}'")
    missing = [f"{b} -> {t}" for b, t in descriptor.block_outputs.items()
               if t not in eng.tensor_names]
    if missing:
        raise MissingTensorError(
            f"model '{path}' does not expose declared block tensors: "
            f"{'; '.join(missing)}")
    return BackboneSession(descriptor, eng, engine)


def extract_features(session: BackboneSession, img: Image,
                     block_id: str) -> FeatureStack:
    """Preprocess, run the forward pass, and return one block's features."""
    return session.extract(img, block_id)
