"""Minimal ONNX protobuf codec: enough to read and write inference graphs.

Covers the message subset that convolutional classifier exports actually
use (nodes, initializers, graph inputs/outputs, numeric attributes). No
dependency on the onnx or protobuf packages; the wire format is the plain
protobuf encoding: varint tags, little-endian fixed fields, and
length-delimited submessages.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from ..errors import ModelLoadError

# TensorProto.DataType values
_DTYPES = {
    1: np.dtype("float32"),
    6: np.dtype("int32"),
    7: np.dtype("int64"),
    9: np.dtype("bool"),
    11: np.dtype("float64"),
}
_DTYPE_CODES = {v: k for k, v in _DTYPES.items()}

# AttributeProto.AttributeType values
_ATTR_FLOAT, _ATTR_INT, _ATTR_STRING, _ATTR_TENSOR = 1, 2, 3, 4
_ATTR_FLOATS, _ATTR_INTS, _ATTR_STRINGS = 6, 7, 8


@dataclass
class OnnxNode:
    op_type: str
    inputs: list[str]
    outputs: list[str]
    name: str = ""
    attrs: dict = field(default_factory=dict)


@dataclass
class OnnxGraph:
    nodes: list[OnnxNode]
    initializers: dict[str, np.ndarray]
    inputs: list[str]
    outputs: list[str]
    name: str = ""

    def tensor_names(self) -> set[str]:
        names = set(self.initializers) | set(self.inputs) | set(self.outputs)
        for node in self.nodes:
            names.update(node.outputs)
        return names


# ----------------------------------------------------------------------
# decoding
# ----------------------------------------------------------------------

def _read_varint(buf: bytes, pos: int) -> tuple[int, int]:
    result = 0
    shift = 0
    while True:
        if pos >= len(buf):
            raise ModelLoadError("truncated protobuf varint")
        b = buf[pos]
        pos += 1
        result |= (b & 0x7F) << shift
        if not b & 0x80:
            return result, pos
        shift += 7
        if shift > 63:
            raise ModelLoadError("oversized protobuf varint")


def _iter_fields(buf: bytes):
    """Yield (field_number, wire_type, value) triples from one message."""
    pos = 0
    n = len(buf)
    while pos < n:
        tag, pos = _read_varint(buf, pos)
        fno, wt = tag >> 3, tag & 7
        if wt == 0:
            val, pos = _read_varint(buf, pos)
        elif wt == 1:
            val, pos = buf[pos:pos + 8], pos + 8
        elif wt == 2:
            ln, pos = _read_varint(buf, pos)
            val, pos = buf[pos:pos + ln], pos + ln
        elif wt == 5:
            val, pos = buf[pos:pos + 4], pos + 4
        else:
            raise ModelLoadError(f"unsupported protobuf wire type {wt}")
        yield fno, wt, val


def _varint_list(raw, wt) -> list[int]:
    """A packed or repeated varint field."""
    if wt == 0:
        return [raw]
    out = []
    pos = 0
    while pos < len(raw):
        v, pos = _read_varint(raw, pos)
        out.append(v)
    return out


def _signed(v: int) -> int:
    return v - (1 << 64) if v >= (1 << 63) else v


def _decode_tensor(buf: bytes) -> tuple[str, np.ndarray]:
    dims: list[int] = []
    dtype_code = 1
    name = ""
    raw = None
    float_data: list[float] = []
    int_data: list[int] = []
    double_data: list[float] = []
    for fno, wt, val in _iter_fields(buf):
        if fno == 1:
            dims.extend(_signed(v) for v in _varint_list(val, wt))
        elif fno == 2:
            dtype_code = val
        elif fno == 4:
            if wt == 5:
                float_data.append(struct.unpack("<f", val)[0])
            else:
                float_data.extend(np.frombuffer(val, dtype="<f4").tolist())
        elif fno in (5, 7):
            int_data.extend(_signed(v) for v in _varint_list(val, wt))
        elif fno == 8:
            name = val.decode("utf-8")
        elif fno == 9:
            raw = bytes(val)
        elif fno == 10:
            if wt == 1:
                double_data.append(struct.unpack("<d", val)[0])
            else:
                double_data.extend(np.frombuffer(val, dtype="<f8").tolist())
    if dtype_code not in _DTYPES:
        raise ModelLoadError(f"unsupported tensor data type {dtype_code}")
    dtype = _DTYPES[dtype_code]
    if raw is not None:
        arr = np.frombuffer(raw, dtype=dtype.newbyteorder("<")).astype(dtype)
    elif float_data:
        arr = np.asarray(float_data, dtype=dtype)
    elif double_data:
        arr = np.asarray(double_data, dtype=dtype)
    else:
        arr = np.asarray(int_data, dtype=dtype)
    return name, arr.reshape(dims) if dims else arr.reshape(())


def _decode_attr(buf: bytes) -> tuple[str, object]:
    name = ""
    atype = None
    f_val = None
    i_val = None
    s_val = None
    t_val = None
    floats: list[float] = []
    ints: list[int] = []
    strings: list[bytes] = []
    for fno, wt, val in _iter_fields(buf):
        if fno == 1:
            name = val.decode("utf-8")
        elif fno == 2:
            f_val = struct.unpack("<f", val)[0]
        elif fno == 3:
            i_val = _signed(val)
        elif fno == 4:
            s_val = val
        elif fno == 5:
            t_val = _decode_tensor(val)[1]
        elif fno == 7:
            if wt == 5:
                floats.append(struct.unpack("<f", val)[0])
            else:
                floats.extend(np.frombuffer(val, dtype="<f4").tolist())
        elif fno == 8:
            ints.extend(_signed(v) for v in _varint_list(val, wt))
        elif fno == 9:
            strings.append(bytes(val))
        elif fno == 20:
            atype = val
    if atype == _ATTR_FLOAT:
        return name, f_val
    if atype == _ATTR_INT:
        return name, i_val
    if atype == _ATTR_STRING:
        return name, s_val.decode("utf-8", "replace")
    if atype == _ATTR_TENSOR:
        return name, t_val
    if atype == _ATTR_FLOATS:
        return name, floats
    if atype == _ATTR_INTS:
        return name, ints
    if atype == _ATTR_STRINGS:
        return name, [s.decode("utf-8", "replace") for s in strings]
    # exporters may omit the type tag; fall back on whichever field is set
    for candidate in (i_val, f_val, s_val, t_val):
        if candidate is not None:
            return name, candidate
    return name, ints or floats or strings


def _decode_node(buf: bytes) -> OnnxNode:
    node = OnnxNode(op_type="", inputs=[], outputs=[])
    for fno, wt, val in _iter_fields(buf):
        if fno == 1:
            node.inputs.append(val.decode("utf-8"))
        elif fno == 2:
            node.outputs.append(val.decode("utf-8"))
        elif fno == 3:
            node.name = val.decode("utf-8")
        elif fno == 4:
            node.op_type = val.decode("utf-8")
        elif fno == 5:
            k, v = _decode_attr(val)
            node.attrs[k] = v
    return node


def _value_info_name(buf: bytes) -> str:
    for fno, wt, val in _iter_fields(buf):
        if fno == 1:
            return val.decode("utf-8")
    return ""


def _decode_graph(buf: bytes) -> OnnxGraph:
    graph = OnnxGraph(nodes=[], initializers={}, inputs=[], outputs=[])
    for fno, wt, val in _iter_fields(buf):
        if fno == 1:
            graph.nodes.append(_decode_node(val))
        elif fno == 2:
            graph.name = val.decode("utf-8")
        elif fno == 5:
            name, arr = _decode_tensor(val)
            graph.initializers[name] = arr
        elif fno == 11:
            graph.inputs.append(_value_info_name(val))
        elif fno == 12:
            graph.outputs.append(_value_info_name(val))
    # initializers double as default inputs in older opsets
    graph.inputs = [n for n in graph.inputs if n not in graph.initializers]
    return graph


def load_model(path) -> OnnxGraph:
    """Parse the graph out of an ONNX model file."""
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as e:
        raise ModelLoadError(f"cannot read model '{path}': {e}") from e
    graph = None
    try:
        for fno, wt, val in _iter_fields(buf):
            if fno == 7:
                graph = _decode_graph(val)
    except ModelLoadError:
        raise
    except Exception as e:
        raise ModelLoadError(f"cannot parse model '{path}': {e}") from e
    if graph is None:
        raise ModelLoadError(f"no graph found in model '{path}'")
    return graph


# ----------------------------------------------------------------------
# encoding
# ----------------------------------------------------------------------

def _varint(v: int) -> bytes:
    out = bytearray()
    while True:
        b = v & 0x7F
        v >>= 7
        if v:
            out.append(b | 0x80)
        else:
            out.append(b)
            return bytes(out)


def _tag(fno: int, wt: int) -> bytes:
    return _varint((fno << 3) | wt)


def _ld(fno: int, payload: bytes) -> bytes:
    return _tag(fno, 2) + _varint(len(payload)) + payload


def _vi(fno: int, v: int) -> bytes:
    return _tag(fno, 0) + _varint(v & ((1 << 64) - 1))


def _encode_tensor(name: str, arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype not in _DTYPE_CODES:
        raise ValueError(f"unsupported tensor dtype {arr.dtype}")
    out = bytearray()
    for d in arr.shape:
        out += _vi(1, d)
    out += _vi(2, _DTYPE_CODES[arr.dtype])
    out += _ld(8, name.encode("utf-8"))
    out += _ld(9, np.ascontiguousarray(arr).astype(
        arr.dtype.newbyteorder("<"), copy=False).tobytes())
    return bytes(out)


def _encode_attr(name: str, value) -> bytes:
    out = bytearray()
    out += _ld(1, name.encode("utf-8"))
    if isinstance(value, bool):
        value = int(value)
    if isinstance(value, int):
        out += _vi(3, value)
        out += _vi(20, _ATTR_INT)
    elif isinstance(value, float):
        out += _tag(2, 5) + struct.pack("<f", value)
        out += _vi(20, _ATTR_FLOAT)
    elif isinstance(value, str):
        out += _ld(4, value.encode("utf-8"))
        out += _vi(20, _ATTR_STRING)
    elif isinstance(value, np.ndarray):
        out += _ld(5, _encode_tensor(name + "_value", value))
        out += _vi(20, _ATTR_TENSOR)
    elif isinstance(value, (list, tuple)) and all(
            isinstance(v, int) for v in value):
        for v in value:
            out += _vi(8, v)
        out += _vi(20, _ATTR_INTS)
    elif isinstance(value, (list, tuple)):
        for v in value:
            out += _tag(7, 5) + struct.pack("<f", float(v))
        out += _vi(20, _ATTR_FLOATS)
    else:
        raise ValueError(f"unsupported attribute value {value!r}")
    return bytes(out)


def _encode_node(node: OnnxNode) -> bytes:
    out = bytearray()
    for name in node.inputs:
        out += _ld(1, name.encode("utf-8"))
    for name in node.outputs:
        out += _ld(2, name.encode("utf-8"))
    if node.name:
        out += _ld(3, node.name.encode("utf-8"))
    out += _ld(4, node.op_type.encode("utf-8"))
    for k, v in node.attrs.items():
        out += _ld(5, _encode_attr(k, v))
    return bytes(out)


def _encode_value_info(name: str, elem_type: int = 1, dims=None) -> bytes:
    shape = bytearray()
    for d in dims or ():
        if isinstance(d, str):
            dim = _ld(2, d.encode("utf-8"))
        else:
            dim = _vi(1, d)
        shape += _ld(1, dim)
    tensor_type = _vi(1, elem_type) + _ld(2, bytes(shape))
    type_proto = _ld(1, tensor_type)
    return _ld(1, name.encode("utf-8")) + _ld(2, type_proto)


def model_bytes(graph: OnnxGraph, input_dims: dict | None = None,
                output_dims: dict | None = None, opset: int = 13) -> bytes:
    """Serialize a graph as a ModelProto.

    ``input_dims``/``output_dims`` map tensor name to a dims tuple whose
    entries are ints or symbolic strings (for dynamic spatial sizes).
    """
    g = bytearray()
    for node in graph.nodes:
        g += _ld(1, _encode_node(node))
    g += _ld(2, (graph.name or "fusezca").encode("utf-8"))
    for name, arr in graph.initializers.items():
        g += _ld(5, _encode_tensor(name, arr))
    for name in graph.inputs:
        dims = (input_dims or {}).get(name)
        g += _ld(11, _encode_value_info(name, dims=dims))
    for name in graph.outputs:
        dims = (output_dims or {}).get(name)
        g += _ld(12, _encode_value_info(name, dims=dims))

    model = bytearray()
    model += _vi(1, 8)  # ir_version
    model += _ld(2, b"fusezca")
    model += _ld(7, bytes(g))
    model += _ld(8, _ld(1, b"") + _vi(2, opset))
    return bytes(model)


def save_model(graph: OnnxGraph, path, **kwargs) -> None:
    with open(path, "wb") as fh:
        fh.write(model_bytes(graph, **kwargs))
