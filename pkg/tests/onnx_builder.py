"""Hand-rolled ONNX file builder for tests.

Encodes just enough of the protobuf wire format to produce small valid
model files without the onnx package, so graph loading and execution can
be exercised hermetically.
"""

from __future__ import annotations

import numpy as np


def _varint(n: int) -> bytes:
    out = bytearray()
    while True:
        b = n & 0x7F
        n >>= 7
        if n:
            out.append(b | 0x80)
        else:
            out.append(b)
            return bytes(out)


def _tag(field: int, wire: int) -> bytes:
    return _varint((field << 3) | wire)


def _len_field(field: int, payload: bytes) -> bytes:
    return _tag(field, 2) + _varint(len(payload)) + payload


def _str_field(field: int, text: str) -> bytes:
    return _len_field(field, text.encode("utf-8"))


def _varint_field(field: int, value: int) -> bytes:
    return _tag(field, 0) + _varint(value)


def tensor_proto(name: str, arr: np.ndarray) -> bytes:
    arr = np.asarray(arr, dtype=np.float32)
    out = b""
    for d in arr.shape:
        out += _varint_field(1, d)
    out += _varint_field(2, 1)  # data_type FLOAT
    out += _str_field(8, name)
    out += _len_field(9, arr.astype("<f4").tobytes())
    return out


def value_info(name: str, shape: tuple[int, ...]) -> bytes:
    dims = b""
    for d in shape:
        dims += _len_field(1, _varint_field(1, d))
    tensor_type = _varint_field(1, 1) + _len_field(2, dims)
    type_proto = _len_field(1, tensor_type)
    return _str_field(1, name) + _len_field(2, type_proto)


def node(op_type: str, inputs: list[str], outputs: list[str]) -> bytes:
    out = b""
    for name in inputs:
        out += _str_field(1, name)
    for name in outputs:
        out += _str_field(2, name)
    out += _str_field(4, op_type)
    return out


def model_bytes(
    nodes: list[bytes],
    initializers: list[bytes],
    inputs: list[bytes],
    outputs: list[bytes],
) -> bytes:
    graph = b""
    for n in nodes:
        graph += _len_field(1, n)
    graph += _str_field(2, "test-graph")
    for t in initializers:
        graph += _len_field(5, t)
    for v in inputs:
        graph += _len_field(11, v)
    for v in outputs:
        graph += _len_field(12, v)
    opset = _len_field(8, _varint_field(2, 13))
    return _varint_field(1, 8) + _len_field(7, graph) + opset


def write_matmul_model(path, weights: np.ndarray) -> None:
    """input (1, k) @ weights (k, d) -> output (1, d)."""
    k, d = weights.shape
    data = model_bytes(
        nodes=[node("MatMul", ["input", "weight"], ["output"])],
        initializers=[tensor_proto("weight", weights)],
        inputs=[value_info("input", (1, k))],
        outputs=[value_info("output", (1, d))],
    )
    with open(path, "wb") as fh:
        fh.write(data)


def write_image_feature_model(path, input_size: int, weights: np.ndarray) -> None:
    """input (1, 3, s, s) -> Flatten -> MatMul weights (3*s*s, d) -> (1, d)."""
    k, d = weights.shape
    assert k == 3 * input_size * input_size
    data = model_bytes(
        nodes=[
            node("Flatten", ["input"], ["flat"]),
            node("MatMul", ["flat", "weight"], ["output"]),
        ],
        initializers=[tensor_proto("weight", weights)],
        inputs=[value_info("input", (1, 3, input_size, input_size))],
        outputs=[value_info("output", (1, d))],
    )
    with open(path, "wb") as fh:
        fh.write(data)


def write_unsupported_op_model(path) -> None:
    data = model_bytes(
        nodes=[node("FancyNonexistentOp", ["input"], ["output"])],
        initializers=[],
        inputs=[value_info("input", (1, 4))],
        outputs=[value_info("output", (1, 4))],
    )
    with open(path, "wb") as fh:
        fh.write(data)
