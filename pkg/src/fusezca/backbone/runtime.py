"""Numpy executor for the ONNX op subset used by CNN classifier exports.

Executes only the nodes a requested output actually depends on, so asking
for an early block skips the rest of the network. Convolution runs as
im2col + GEMM in float32, matching the usual inference-engine precision.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import InferenceError
from .onnx_proto import OnnxGraph


class NumpyGraphRuntime:
    """Single-batch forward evaluator over a parsed ONNX graph."""

    def __init__(self, graph: OnnxGraph):
        self.graph = graph
        self.tensor_names = graph.tensor_names()
        self._producer = {}
        for node in graph.nodes:
            for out in node.outputs:
                self._producer[out] = node

    def run(self, output_names: list[str], feeds: dict[str, np.ndarray]):
        values: dict[str, np.ndarray] = dict(self.graph.initializers)
        values.update(feeds)
        for node in self._plan(output_names, set(values)):
            op = _OPS.get(node.op_type)
            if op is None:
                raise InferenceError(
                    f"unsupported op '{node.op_type}' (node '{node.name}')")
            ins = [values[n] if n else None for n in node.inputs]
            try:
                outs = op(node, ins)
            except InferenceError:
                raise
            except Exception as e:
                raise InferenceError(
                    f"op '{node.op_type}' (node '{node.name}') failed: {e}"
                ) from e
            for name, arr in zip(node.outputs, outs):
                values[name] = arr
        missing = [n for n in output_names if n not in values]
        if missing:
            raise InferenceError(f"outputs never produced: {missing}")
        return [values[n] for n in output_names]

    def _plan(self, output_names, available):
        """Nodes needed for the requested outputs, in graph order."""
        needed = set()
        stack = [n for n in output_names if n not in available]
        seen = set(stack)
        while stack:
            name = stack.pop()
            node = self._producer.get(name)
            if node is None:
                raise InferenceError(f"no producer for tensor '{name}'")
            needed.add(id(node))
            for src in node.inputs:
                if src and src not in available and src not in seen:
                    seen.add(src)
                    stack.append(src)
        return [n for n in self.graph.nodes if id(n) in needed]


def _pair(attrs, key, default):
    v = attrs.get(key)
    if v is None:
        return default
    return (int(v[0]), int(v[1]))


def _conv(node, ins):
    x, w = ins[0], ins[1]
    b = ins[2] if len(ins) > 2 else None
    attrs = node.attrs
    if int(attrs.get("group", 1)) != 1:
        raise InferenceError("grouped convolution not supported")
    dh, dw = _pair(attrs, "dilations", (1, 1))
    if (dh, dw) != (1, 1):
        raise InferenceError("dilated convolution not supported")
    sh, sw = _pair(attrs, "strides", (1, 1))
    pads = attrs.get("pads", [0, 0, 0, 0])
    pt, pl, pb, pr = (int(p) for p in pads)
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    oh, ow = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, cin * kh * kw)
    out = cols @ w.reshape(cout, -1).T
    if b is not None:
        out = out + b
    return [out.reshape(n, oh, ow, cout).transpose(0, 3, 1, 2)]


def _maxpool(node, ins):
    x = ins[0]
    attrs = node.attrs
    kh, kw = _pair(attrs, "kernel_shape", (1, 1))
    sh, sw = _pair(attrs, "strides", (1, 1))
    pads = attrs.get("pads", [0, 0, 0, 0])
    pt, pl, pb, pr = (int(p) for p in pads)
    if int(attrs.get("ceil_mode", 0)):
        h, wd = x.shape[2], x.shape[3]
        oh = -(-(h + pt + pb - kh) // sh) + 1
        ow = -(-(wd + pl + pr - kw) // sw) + 1
        pb += max(0, (oh - 1) * sh + kh - (h + pt + pb))
        pr += max(0, (ow - 1) * sw + kw - (wd + pl + pr))
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)),
                constant_values=-np.inf)
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    return [win.max(axis=(4, 5))]


def _batchnorm(node, ins):
    x, scale, bias, mean, var = ins[:5]
    eps = float(node.attrs.get("epsilon", 1e-5))
    shape = (1, -1, 1, 1)
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    return [x * (scale * inv).reshape(shape)
            + (bias - mean * scale * inv).reshape(shape)]


def _gemm(node, ins):
    a, b = ins[0], ins[1]
    c = ins[2] if len(ins) > 2 else 0
    attrs = node.attrs
    if int(attrs.get("transA", 0)):
        a = a.T
    if int(attrs.get("transB", 0)):
        b = b.T
    alpha = float(attrs.get("alpha", 1.0))
    beta = float(attrs.get("beta", 1.0))
    return [alpha * (a @ b) + beta * c]


_OPS = {
    "Conv": _conv,
    "MaxPool": _maxpool,
    "BatchNormalization": _batchnorm,
    "Gemm": _gemm,
    "Relu": lambda n, ins: [np.maximum(ins[0], 0)],
    "Add": lambda n, ins: [ins[0] + ins[1]],
    "GlobalAveragePool": lambda n, ins: [
        ins[0].mean(axis=(2, 3), keepdims=True)],
    "Flatten": lambda n, ins: [ins[0].reshape(ins[0].shape[0], -1)],
    "Identity": lambda n, ins: [ins[0]],
    "Constant": lambda n, ins: [n.attrs["value"]],
}
