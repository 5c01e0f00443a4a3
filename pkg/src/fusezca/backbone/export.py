"""Export torchvision classifier weights as block-output ONNX graphs.

The emitted graphs consume the package's canonical network input (gray
replicated to RGB, scaled to [0, 255], ImageNet means subtracted): the
torchvision normalisation is folded into the first convolution and every
batch-norm is folded into its preceding convolution, so the graphs contain
only Conv/Relu/MaxPool/Add nodes. Block outputs are declared as graph
outputs under their block names (conv1..conv5, relu1_1..relu4_1).

Requires torch + torchvision (the ``export`` extra); the rest of the
package does not.
"""

from __future__ import annotations

import numpy as np

from .onnx_proto import OnnxGraph, OnnxNode, save_model

# torchvision normalisation constants
_TV_MEAN = np.array([0.485, 0.456, 0.406])
_TV_STD = np.array([0.229, 0.224, 0.225])
# canonical input: 255 * I - these means
_INPUT_MEANS = np.array([123.68, 116.779, 103.939])


def _bridge_constants():
    """Shift and scale taking the canonical input to torchvision's.

    Canonical input is s = 255*I - means; torchvision wants
    z = (I - tv_mean)/tv_std = (s + shift) * scale with the constants
    below. The shift is emitted as an Add node on the input plane and the
    scale folds into the first convolution's input channels; splitting it
    this way keeps zero padding exact (a folded bias would be wrong in the
    padded border).
    """
    shift = _INPUT_MEANS - 255.0 * _TV_MEAN
    scale = 1.0 / (255.0 * _TV_STD)
    return shift, scale


class _GraphBuilder:
    def __init__(self):
        self.nodes: list[OnnxNode] = []
        self.inits: dict[str, np.ndarray] = {}
        self.outputs: list[str] = []
        self._n = 0

    def _tensor(self, prefix: str) -> str:
        self._n += 1
        return f"{prefix}_{self._n}"

    def conv(self, x: str, weight: np.ndarray, bias: np.ndarray,
             stride: int, padding: int, out: str | None = None) -> str:
        out = out or self._tensor("t")
        wname, bname = out + "_w", out + "_b"
        self.inits[wname] = weight.astype(np.float32)
        self.inits[bname] = bias.astype(np.float32)
        self.nodes.append(OnnxNode(
            "Conv", [x, wname, bname], [out], out + "_conv",
            {"strides": [stride, stride],
             "pads": [padding] * 4,
             "kernel_shape": list(weight.shape[2:])}))
        return out

    def relu(self, x: str, out: str | None = None) -> str:
        out = out or self._tensor("t")
        self.nodes.append(OnnxNode("Relu", [x], [out], out + "_relu"))
        return out

    def add(self, x: str, y: str) -> str:
        out = self._tensor("t")
        self.nodes.append(OnnxNode("Add", [x, y], [out], out + "_add"))
        return out

    def maxpool(self, x: str, kernel: int, stride: int, padding: int) -> str:
        out = self._tensor("t")
        self.nodes.append(OnnxNode(
            "MaxPool", [x], [out], out + "_pool",
            {"kernel_shape": [kernel, kernel],
             "strides": [stride, stride],
             "pads": [padding] * 4}))
        return out

    def graph(self, name: str) -> OnnxGraph:
        return OnnxGraph(nodes=self.nodes, initializers=self.inits,
                         inputs=["input"], outputs=self.outputs, name=name)


def _fold_bn(conv, bn):
    """Conv(+optional bias) followed by BatchNorm2d -> (weight, bias)."""
    w = conv.weight.detach().numpy().astype(np.float64)
    b = (conv.bias.detach().numpy().astype(np.float64)
         if conv.bias is not None else np.zeros(w.shape[0]))
    gamma = bn.weight.detach().numpy().astype(np.float64)
    beta = bn.bias.detach().numpy().astype(np.float64)
    mean = bn.running_mean.detach().numpy().astype(np.float64)
    var = bn.running_var.detach().numpy().astype(np.float64)
    scale = gamma / np.sqrt(var + bn.eps)
    return w * scale[:, None, None, None], (b - mean) * scale + beta


def _bridge_input(g: _GraphBuilder) -> tuple[str, np.ndarray]:
    """Emit the input shift node; return its output and the scale to fold
    into the first convolution's input channels."""
    shift, scale = _bridge_constants()
    g.inits["input_shift"] = shift.reshape(1, 3, 1, 1).astype(np.float32)
    shifted = g._tensor("t")
    g.nodes.append(OnnxNode("Add", ["input", "input_shift"], [shifted],
                            "bridge_shift"))
    return shifted, scale


def _export_resnet(model) -> _GraphBuilder:
    g = _GraphBuilder()
    x, scale = _bridge_input(g)
    w, b = _fold_bn(model.conv1, model.bn1)
    w = w * scale[None, :, None, None]
    x = g.conv(x, w, b, stride=2, padding=3)
    x = g.relu(x, out="conv1")
    g.outputs.append("conv1")
    x = g.maxpool(x, kernel=3, stride=2, padding=1)
    for i, layer in enumerate(
            (model.layer1, model.layer2, model.layer3, model.layer4)):
        for j, block in enumerate(layer):
            is_last = j == len(layer) - 1
            x = _export_bottleneck(g, x, block,
                                   out=f"conv{i + 2}" if is_last else None)
        g.outputs.append(f"conv{i + 2}")
    return g


def _export_bottleneck(g: _GraphBuilder, x: str, block,
                       out: str | None) -> str:
    identity = x
    w, b = _fold_bn(block.conv1, block.bn1)
    y = g.relu(g.conv(x, w, b, stride=1, padding=0))
    w, b = _fold_bn(block.conv2, block.bn2)
    stride = block.conv2.stride[0]
    y = g.relu(g.conv(y, w, b, stride=stride, padding=1))
    w, b = _fold_bn(block.conv3, block.bn3)
    y = g.conv(y, w, b, stride=1, padding=0)
    if block.downsample is not None:
        w, b = _fold_bn(block.downsample[0], block.downsample[1])
        identity = g.conv(x, w, b,
                          stride=block.downsample[0].stride[0], padding=0)
    return g.relu(g.add(y, identity), out=out)


_VGG_BLOCK_OUTPUTS = {1: "relu1_1", 6: "relu2_1", 11: "relu3_1",
                      20: "relu4_1"}


def _export_vgg19(model) -> _GraphBuilder:
    import torch.nn as nn

    g = _GraphBuilder()
    x, scale = _bridge_input(g)
    first_conv = True
    for idx, module in enumerate(model.features):
        if idx > max(_VGG_BLOCK_OUTPUTS):
            break
        if isinstance(module, nn.Conv2d):
            w = module.weight.detach().numpy().astype(np.float64)
            b = module.bias.detach().numpy().astype(np.float64)
            if first_conv:
                w = w * scale[None, :, None, None]
                first_conv = False
            x = g.conv(x, w, b, stride=1, padding=1)
        elif isinstance(module, nn.ReLU):
            x = g.relu(x, out=_VGG_BLOCK_OUTPUTS.get(idx))
            if idx in _VGG_BLOCK_OUTPUTS:
                g.outputs.append(_VGG_BLOCK_OUTPUTS[idx])
        elif isinstance(module, nn.MaxPool2d):
            x = g.maxpool(x, kernel=2, stride=2, padding=0)
        else:
            raise ValueError(f"unexpected vgg module {type(module)}")
    return g


def export_backbone(backbone_id: str, model, path) -> None:
    """Write one torchvision model as a block-output ONNX graph."""
    if backbone_id in ("resnet50", "resnet101"):
        builder = _export_resnet(model)
    elif backbone_id == "vgg19":
        builder = _export_vgg19(model)
    else:
        raise ValueError(f"unsupported backbone '{backbone_id}'")
    graph = builder.graph(backbone_id)
    dims = {name: (1, "c", "h", "w") for name in graph.outputs}
    save_model(graph, path, input_dims={"input": (1, 3, "h", "w")},
               output_dims=dims)


def load_torchvision_model(backbone_id: str, pretrained: bool = True):
    """Instantiate the torchvision model (downloads weights if pretrained)."""
    from torchvision import models

    factory = {"resnet50": models.resnet50,
               "resnet101": models.resnet101,
               "vgg19": models.vgg19}[backbone_id]
    if pretrained:
        model = factory(weights="IMAGENET1K_V1")
    else:
        model = factory(weights=None)
    return model.eval()
