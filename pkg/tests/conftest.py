import numpy as np
import pytest

from fusezca.backbone import FeatureStack
from fusezca.backbone.onnx_proto import OnnxGraph, OnnxNode, save_model
from fusezca.core import Image


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def smooth_image(rng, shape=(48, 64), cutoff=6) -> Image:
    """Natural-ish test image: low-pass filtered noise, normalized."""
    noise = rng.normal(size=shape)
    spectrum = np.fft.rfft2(noise)
    fy = np.fft.fftfreq(shape[0])[:, None]
    fx = np.fft.rfftfreq(shape[1])[None, :]
    spectrum *= np.exp(-((fy * shape[0]) ** 2 + (fx * shape[1]) ** 2)
                       / (2.0 * cutoff ** 2))
    img = np.fft.irfft2(spectrum, s=shape)
    img -= img.min()
    peak = img.max()
    if peak > 0:
        img /= peak
    return Image(img)


@pytest.fixture
def image_pair(rng):
    from fusezca.core import ImagePair

    ir = smooth_image(rng, (48, 64), cutoff=5)
    vis = smooth_image(rng, (48, 64), cutoff=9)
    return ImagePair(ir, vis)


class StubSession:
    """Offline stand-in for a backbone session.

    Produces deterministic multichannel features by average-pooling the
    image at a fixed stride and applying per-channel affine mixes; enough
    structure for pipeline tests without any model file.
    """

    backbone_id = "resnet50"

    def __init__(self, channels=6, stride=4):
        self.channels = channels
        self.stride = stride

    def extract(self, img: Image, block_id: str) -> FeatureStack:
        s = self.stride
        fh, fw = img.height // s, img.width // s
        pooled = img.data[:fh * s, :fw * s].reshape(fh, s, fw, s)
        pooled = pooled.mean(axis=(1, 3))
        chans = []
        for j in range(self.channels):
            shifted = np.roll(pooled, shift=j, axis=j % 2)
            chans.append((j + 1.0) * pooled + 0.25 * j * shifted)
        return FeatureStack(np.stack(chans), block_id,
                            (img.height, img.width))

    def extract_many(self, img, block_ids):
        return {b: self.extract(img, b) for b in block_ids}


@pytest.fixture
def stub_session():
    return StubSession()


def build_tiny_model(path, seed=3):
    """A small two-conv ONNX net written with the package's own codec."""
    rng = np.random.default_rng(seed)
    w1 = rng.normal(scale=0.4, size=(4, 3, 3, 3)).astype(np.float32)
    b1 = rng.normal(scale=0.1, size=(4,)).astype(np.float32)
    w2 = rng.normal(scale=0.4, size=(8, 4, 3, 3)).astype(np.float32)
    b2 = rng.normal(scale=0.1, size=(8,)).astype(np.float32)
    graph = OnnxGraph(
        nodes=[
            OnnxNode("Conv", ["input", "w1", "b1"], ["c1"], "conv_a",
                     {"strides": [2, 2], "pads": [1, 1, 1, 1],
                      "kernel_shape": [3, 3]}),
            OnnxNode("Relu", ["c1"], ["blockA"], "relu_a"),
            OnnxNode("Conv", ["blockA", "w2", "b2"], ["c2"], "conv_b",
                     {"strides": [2, 2], "pads": [1, 1, 1, 1],
                      "kernel_shape": [3, 3]}),
            OnnxNode("Relu", ["c2"], ["blockB"], "relu_b"),
            OnnxNode("Flatten", ["blockB"], ["flat"], "flatten"),
        ],
        initializers={"w1": w1, "b1": b1, "w2": w2, "b2": b2},
        inputs=["input"],
        outputs=["blockA", "blockB", "flat"],
    )
    save_model(graph, path, input_dims={"input": (1, 3, "h", "w")})


TINY_BLOCK_MAP = {
    "conv1": "blockA",
    "conv2": "blockA",
    "conv3": "blockA",
    "conv4": "blockA",
    "conv5": "blockB",
}


@pytest.fixture(scope="session")
def tiny_model_dir(tmp_path_factory):
    """Model dir with a tiny net plus a descriptor mapping all resnet50
    blocks onto its two feature tensors."""
    import json

    path = tmp_path_factory.mktemp("models")
    build_tiny_model(path / "tiny.onnx")
    descriptor = {
        "backbone_id": "resnet50",
        "model_file": "tiny.onnx",
        "block_outputs": TINY_BLOCK_MAP,
        "preprocess": {
            "target_range": 255.0,
            "channel_means": [123.68, 116.779, 103.939],
            "replicate_gray_to_rgb": True,
        },
    }
    (path / "tiny.json").write_text(json.dumps(descriptor), "utf-8")
    return path
