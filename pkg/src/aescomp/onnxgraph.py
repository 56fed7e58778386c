"""Minimal ONNX graph loader and numpy executor.

Reads the protobuf wire format directly (no protobuf runtime needed) and
evaluates the small operator set that image-classification feature
extractors are exported with: Conv, BatchNormalization, Relu, MaxPool,
AveragePool, GlobalAveragePool, Add, Gemm, MatMul, Flatten, Reshape,
Concat, Dropout/Identity and Constant. Inference is single-batch,
float32, CPU only.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import GraphError, IoError

# --- protobuf wire format -----------------------------------------------------

_WIRE_VARINT = 0
_WIRE_64BIT = 1
_WIRE_LEN = 2
_WIRE_32BIT = 5


def _read_varint(buf: bytes, pos: int) -> tuple[int, int]:
    result = 0
    shift = 0
    while True:
        if pos >= len(buf):
            raise GraphError("truncated varint")
        b = buf[pos]
        pos += 1
        result |= (b & 0x7F) << shift
        if not b & 0x80:
            return result, pos
        shift += 7
        if shift > 70:
            raise GraphError("varint too long")


def _iter_fields(buf: bytes):
    """Yield (field_number, wire_type, value) for every field in a message."""
    pos = 0
    n = len(buf)
    while pos < n:
        key, pos = _read_varint(buf, pos)
        fieldno = key >> 3
        wire = key & 7
        if wire == _WIRE_VARINT:
            value, pos = _read_varint(buf, pos)
        elif wire == _WIRE_64BIT:
            value = buf[pos : pos + 8]
            pos += 8
        elif wire == _WIRE_LEN:
            length, pos = _read_varint(buf, pos)
            value = buf[pos : pos + length]
            pos += length
        elif wire == _WIRE_32BIT:
            value = buf[pos : pos + 4]
            pos += 4
        else:
            raise GraphError(f"unsupported wire type {wire}")
        if pos > n:
            raise GraphError("truncated message")
        yield fieldno, wire, value


def _packed_varints(value, wire) -> list[int]:
    if wire == _WIRE_VARINT:
        return [value]
    out = []
    pos = 0
    while pos < len(value):
        v, pos = _read_varint(value, pos)
        out.append(v)
    return out


def _signed64(v: int) -> int:
    return v - (1 << 64) if v >= (1 << 63) else v


# ONNX tensor element types we accept.
_DT_FLOAT = 1
_DT_INT64 = 7


def _parse_tensor(buf: bytes) -> tuple[str, np.ndarray]:
    dims: list[int] = []
    dtype = _DT_FLOAT
    name = ""
    raw = b""
    float_data: list[float] = []
    int64_data: list[int] = []
    for fieldno, wire, value in _iter_fields(buf):
        if fieldno == 1:
            dims.extend(_packed_varints(value, wire))
        elif fieldno == 2:
            dtype = value
        elif fieldno == 4:
            if wire == _WIRE_32BIT:
                float_data.append(struct.unpack("<f", value)[0])
            else:
                float_data.extend(np.frombuffer(value, dtype="<f4").tolist())
        elif fieldno == 7:
            int64_data.extend(_signed64(v) for v in _packed_varints(value, wire))
        elif fieldno == 8:
            name = value.decode("utf-8")
        elif fieldno == 9:
            raw = value
    if dtype == _DT_FLOAT:
        if raw:
            arr = np.frombuffer(raw, dtype="<f4").copy()
        else:
            arr = np.asarray(float_data, dtype=np.float32)
    elif dtype == _DT_INT64:
        if raw:
            arr = np.frombuffer(raw, dtype="<i8").copy()
        else:
            arr = np.asarray(int64_data, dtype=np.int64)
    else:
        raise GraphError(f"unsupported tensor element type {dtype} for {name!r}")
    return name, arr.reshape(dims if dims else ())


@dataclass
class Attribute:
    name: str
    value: object


def _parse_attribute(buf: bytes) -> Attribute:
    name = ""
    value: object = None
    ints: list[int] = []
    floats: list[float] = []
    for fieldno, wire, raw in _iter_fields(buf):
        if fieldno == 1:
            name = raw.decode("utf-8")
        elif fieldno == 2:
            value = struct.unpack("<f", raw)[0]
        elif fieldno == 3:
            value = _signed64(raw)
        elif fieldno == 4:
            value = raw.decode("utf-8", errors="replace")
        elif fieldno == 5:
            value = _parse_tensor(raw)[1]
        elif fieldno == 7:
            if wire == _WIRE_32BIT:
                floats.append(struct.unpack("<f", raw)[0])
            else:
                floats.extend(np.frombuffer(raw, dtype="<f4").tolist())
        elif fieldno == 8:
            ints.extend(_signed64(v) for v in _packed_varints(raw, wire))
    if ints:
        value = ints
    elif floats:
        value = floats
    return Attribute(name=name, value=value)


@dataclass
class Node:
    op_type: str
    inputs: list[str]
    outputs: list[str]
    attrs: dict[str, object]
    name: str = ""

    def attr(self, key: str, default=None):
        return self.attrs.get(key, default)


def _parse_node(buf: bytes) -> Node:
    inputs: list[str] = []
    outputs: list[str] = []
    attrs: dict[str, object] = {}
    op_type = ""
    name = ""
    for fieldno, _wire, value in _iter_fields(buf):
        if fieldno == 1:
            inputs.append(value.decode("utf-8"))
        elif fieldno == 2:
            outputs.append(value.decode("utf-8"))
        elif fieldno == 3:
            name = value.decode("utf-8")
        elif fieldno == 4:
            op_type = value.decode("utf-8")
        elif fieldno == 5:
            a = _parse_attribute(value)
            attrs[a.name] = a.value
    return Node(op_type=op_type, inputs=inputs, outputs=outputs, attrs=attrs, name=name)


def _parse_value_info(buf: bytes) -> tuple[str, list[int | None]]:
    """Return (name, shape) where unknown dims are None."""
    name = ""
    shape: list[int | None] = []
    for fieldno, _wire, value in _iter_fields(buf):
        if fieldno == 1:
            name = value.decode("utf-8")
        elif fieldno == 2:  # TypeProto
            for f2, _w2, v2 in _iter_fields(value):
                if f2 != 1:  # tensor_type
                    continue
                for f3, _w3, v3 in _iter_fields(v2):
                    if f3 != 2:  # shape
                        continue
                    for f4, _w4, v4 in _iter_fields(v3):
                        if f4 != 1:  # dim
                            continue
                        dim_value: int | None = None
                        for f5, _w5, v5 in _iter_fields(v4):
                            if f5 == 1:
                                dim_value = _signed64(v5)
                        shape.append(dim_value)
    return name, shape


@dataclass
class OnnxGraph:
    nodes: list[Node]
    initializers: dict[str, np.ndarray]
    input_name: str
    output_name: str
    output_shape: list[int | None] = field(default_factory=list)

    @classmethod
    def load(cls, path) -> "OnnxGraph":
        try:
            with open(path, "rb") as fh:
                data = fh.read()
        except OSError as e:
            raise IoError(f"cannot read graph file {path}: {e}") from e
        graph_buf = None
        try:
            for fieldno, _wire, value in _iter_fields(data):
                if fieldno == 7:  # ModelProto.graph
                    graph_buf = value
        except GraphError as e:
            raise GraphError(f"{path} is not a valid portable graph: {e}") from e
        if graph_buf is None:
            raise GraphError(f"{path} contains no graph")
        return cls.from_graph_proto(graph_buf, path)

    @classmethod
    def from_graph_proto(cls, graph_buf: bytes, origin="<bytes>") -> "OnnxGraph":
        nodes: list[Node] = []
        initializers: dict[str, np.ndarray] = {}
        inputs: list[str] = []
        outputs: list[tuple[str, list[int | None]]] = []
        try:
            for fieldno, _wire, value in _iter_fields(graph_buf):
                if fieldno == 1:
                    nodes.append(_parse_node(value))
                elif fieldno == 5:
                    name, arr = _parse_tensor(value)
                    initializers[name] = arr
                elif fieldno == 11:
                    inputs.append(_parse_value_info(value)[0])
                elif fieldno == 12:
                    outputs.append(_parse_value_info(value))
        except (GraphError, struct.error) as e:
            raise GraphError(f"{origin} is not a valid portable graph: {e}") from e
        real_inputs = [n for n in inputs if n not in initializers]
        if len(real_inputs) != 1:
            raise GraphError(f"{origin}: expected exactly one graph input, got {real_inputs}")
        if len(outputs) != 1:
            raise GraphError(f"{origin}: expected exactly one graph output")
        return cls(
            nodes=nodes,
            initializers=initializers,
            input_name=real_inputs[0],
            output_name=outputs[0][0],
            output_shape=outputs[0][1],
        )

    def output_dim(self) -> int | None:
        """Feature count per batch element, None when the shape is symbolic."""
        if not self.output_shape or any(d is None for d in self.output_shape[1:]):
            return None
        dim = 1
        for d in self.output_shape[1:]:
            dim *= d
        return dim

    def run(self, x: np.ndarray) -> np.ndarray:
        values: dict[str, np.ndarray] = dict(self.initializers)
        values[self.input_name] = np.asarray(x, dtype=np.float32)
        for node in self.nodes:
            fn = _OPS.get(node.op_type)
            if fn is None:
                raise GraphError(f"unsupported operator {node.op_type!r} in graph")
            try:
                args = [values[name] if name else None for name in node.inputs]
            except KeyError as e:
                raise GraphError(f"node {node.name!r} references unknown value {e}") from e
            result = fn(node, args)
            if not isinstance(result, tuple):
                result = (result,)
            for out_name, out_val in zip(node.outputs, result):
                if out_name:
                    values[out_name] = out_val
        if self.output_name not in values:
            raise GraphError(f"graph never produced output {self.output_name!r}")
        return values[self.output_name]


# --- operators ------------------------------------------------------------------


def _pool_pad(x, pads, fill):
    if not any(pads):
        return x
    pb, pe = pads[: len(pads) // 2], pads[len(pads) // 2 :]
    width = [(0, 0), (0, 0)] + [(b, e) for b, e in zip(pb, pe)]
    return np.pad(x, width, mode="constant", constant_values=fill)


def _windows(x, kh, kw, sh, sw):
    w = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    return w[:, :, ::sh, ::sw]


def _op_conv(node, args):
    x, w = args[0], args[1]
    b = args[2] if len(args) > 2 else None
    strides = node.attr("strides", [1, 1])
    pads = node.attr("pads", [0, 0, 0, 0])
    dilations = node.attr("dilations", [1, 1])
    group = node.attr("group", 1)
    if list(dilations) != [1, 1]:
        raise GraphError("Conv dilation != 1 is not supported")
    xp = _pool_pad(x, pads, 0.0)
    n, cin, _, _ = xp.shape
    cout, cin_g, kh, kw = w.shape
    win = _windows(xp, kh, kw, strides[0], strides[1])  # n, cin, ho, wo, kh, kw
    _, _, ho, wo, _, _ = win.shape
    outs = []
    cpg_out = cout // group
    for g in range(group):
        wg = w[g * cpg_out : (g + 1) * cpg_out].reshape(cpg_out, -1)
        xg = win[:, g * cin_g : (g + 1) * cin_g]
        cols = xg.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, cin_g * kh * kw)
        outs.append((cols @ wg.T).reshape(n, ho, wo, cpg_out))
    out = np.concatenate(outs, axis=3).transpose(0, 3, 1, 2)
    if b is not None:
        out = out + b[None, :, None, None]
    return np.ascontiguousarray(out, dtype=np.float32)


def _op_maxpool(node, args):
    (x,) = args[:1]
    kh, kw = node.attr("kernel_shape")
    strides = node.attr("strides", [1, 1])
    pads = list(node.attr("pads", [0, 0, 0, 0]))
    if node.attr("ceil_mode", 0):
        # pad the end so the last partial window is included
        for axis in (0, 1):
            size = x.shape[2 + axis] + pads[axis] + pads[2 + axis]
            k = (kh, kw)[axis]
            s = strides[axis]
            rem = (size - k) % s
            if rem:
                pads[2 + axis] += s - rem
    xp = _pool_pad(x, pads, -np.inf)
    win = _windows(xp, kh, kw, strides[0], strides[1])
    return win.max(axis=(4, 5)).astype(np.float32)


def _op_avgpool(node, args):
    (x,) = args[:1]
    kh, kw = node.attr("kernel_shape")
    strides = node.attr("strides", [1, 1])
    pads = list(node.attr("pads", [0, 0, 0, 0]))
    include_pad = node.attr("count_include_pad", 0)
    if node.attr("ceil_mode", 0):
        raise GraphError("AveragePool ceil_mode is not supported")
    xp = _pool_pad(x, pads, 0.0)
    win = _windows(xp, kh, kw, strides[0], strides[1])
    if include_pad or not any(pads):
        return win.mean(axis=(4, 5)).astype(np.float32)
    ones = _pool_pad(np.ones_like(x), pads, 0.0)
    counts = _windows(ones, kh, kw, strides[0], strides[1]).sum(axis=(4, 5))
    return (win.sum(axis=(4, 5)) / counts).astype(np.float32)


def _op_gap(node, args):
    (x,) = args[:1]
    return x.mean(axis=(2, 3), keepdims=True).astype(np.float32)


def _op_batchnorm(node, args):
    x, scale, bias, mean, var = args[:5]
    eps = node.attr("epsilon", 1e-5)
    inv = scale / np.sqrt(var + eps)
    return (x * inv[None, :, None, None] + (bias - mean * inv)[None, :, None, None]).astype(
        np.float32
    )


def _op_gemm(node, args):
    a, b = args[0], args[1]
    c = args[2] if len(args) > 2 else 0.0
    alpha = node.attr("alpha", 1.0)
    beta = node.attr("beta", 1.0)
    if node.attr("transA", 0):
        a = a.T
    if node.attr("transB", 0):
        b = b.T
    return (alpha * (a @ b) + beta * c).astype(np.float32)


def _op_flatten(node, args):
    (x,) = args[:1]
    axis = node.attr("axis", 1)
    lead = int(np.prod(x.shape[:axis])) if axis else 1
    return x.reshape(lead, -1)


def _op_reshape(node, args):
    x, shape = args[0], args[1]
    target = [int(v) for v in np.asarray(shape).reshape(-1)]
    target = [x.shape[i] if v == 0 else v for i, v in enumerate(target)]
    return x.reshape(target)


def _op_dropout(node, args):
    return args[0]


_OPS = {
    "Conv": _op_conv,
    "Relu": lambda node, args: np.maximum(args[0], 0.0),
    "MaxPool": _op_maxpool,
    "AveragePool": _op_avgpool,
    "GlobalAveragePool": _op_gap,
    "BatchNormalization": _op_batchnorm,
    "Add": lambda node, args: (args[0] + args[1]).astype(np.float32),
    "Gemm": _op_gemm,
    "MatMul": lambda node, args: (args[0] @ args[1]).astype(np.float32),
    "Flatten": _op_flatten,
    "Reshape": _op_reshape,
    "Concat": lambda node, args: np.concatenate(args, axis=node.attr("axis", 0)),
    "Dropout": _op_dropout,
    "Identity": lambda node, args: args[0],
    "Constant": lambda node, args: np.asarray(node.attr("value")),
}
