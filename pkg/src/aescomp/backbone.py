"""Feature-extracting backbones behind a single narrow interface.

A backbone takes a preprocessed (3, s, s) tensor and returns a fixed-size
float32 feature vector. Two implementations exist: portable ONNX graphs
(real pretrained networks) and deterministic stub backbones used by the
test suite and by the ``stub:<seed>`` CLI ids.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DescriptorMismatch, IoError, NumericsError, ShapeError
from .imageprep import DEFAULT_MEANS, DEFAULT_STDS, ViewKind


class FeatureLayer(Enum):
    FIRST_FULLY_CONNECTED = "first_fc"
    GLOBAL_AVERAGE_POOL = "avgpool"


@dataclass(frozen=True)
class BackboneDescriptor:
    id: str
    graph_path: str
    feature_layer: FeatureLayer
    feature_dim: int
    input_size: int
    channel_means: tuple[float, float, float] = DEFAULT_MEANS
    channel_stds: tuple[float, float, float] = DEFAULT_STDS

    def __post_init__(self) -> None:
        if self.feature_dim <= 0:
            raise ValueError("feature_dim must be positive")
        if any(s <= 0 for s in self.channel_stds):
            raise ValueError("channel stds must be positive")


@dataclass(frozen=True)
class FeatureVector:
    backbone_id: str
    view: ViewKind
    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 1:
            raise ShapeError("feature values must be a flat vector")
        if not np.all(np.isfinite(v)):
            raise NumericsError("feature vector contains non-finite values")
        object.__setattr__(self, "values", v)
        v.setflags(write=False)

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])


class Backbone:
    """Inference handle: deterministic tensor -> feature vector."""

    id: str
    feature_dim: int
    input_size: int

    def extract(self, tensor: np.ndarray) -> np.ndarray:
        raise NotImplementedError


def extract_features(backbone: Backbone, tensor: np.ndarray, view: ViewKind) -> FeatureVector:
    """Run one tensor through a backbone, validating shapes and numerics."""
    t = np.asarray(tensor, dtype=np.float32)
    s = backbone.input_size
    if t.shape != (3, s, s):
        raise ShapeError(f"tensor shape {t.shape} does not match backbone input (3, {s}, {s})")
    values = np.asarray(backbone.extract(t), dtype=np.float32).reshape(-1)
    if values.shape[0] != backbone.feature_dim:
        raise ShapeError(
            f"backbone emitted {values.shape[0]} values, descriptor says {backbone.feature_dim}"
        )
    if not np.all(np.isfinite(values)):
        raise NumericsError(f"backbone {backbone.id} produced non-finite activations")
    return FeatureVector(backbone_id=backbone.id, view=view, values=values)


# --- deterministic stub backbone -------------------------------------------

_XORSHIFT_MULT = 0x2545F4914F6CDD1D
_U64 = (1 << 64) - 1
_SEED_FALLBACK = 0x9E3779B97F4A7C15


def xorshift64star_signs(seed: int, count: int) -> np.ndarray:
    """First ``count`` sign entries (+1/-1) of an xorshift64* stream.

    Each step is x ^= x >> 12; x ^= x << 25; x ^= x >> 27; out = x * M
    (all mod 2^64); the entry is +1 when the output's top bit is set,
    -1 otherwise. A zero seed falls back to a fixed nonzero constant.
    """
    x = seed & _U64
    if x == 0:
        x = _SEED_FALLBACK
    out = np.empty(count, dtype=np.float32)
    for i in range(count):
        x ^= x >> 12
        x = (x ^ (x << 25)) & _U64
        x ^= x >> 27
        word = (x * _XORSHIFT_MULT) & _U64
        out[i] = 1.0 if word >> 63 else -1.0
    return out


class StubBackbone(Backbone):
    """Seeded random signed projection; exactly linear in the input tensor.

    features = M @ flatten(tensor) / sqrt(n) with M a (dim, n) matrix of
    +-1 entries drawn row-major from xorshift64*(seed), n = 3 * size^2.
    """

    def __init__(self, seed: int, dim: int, input_size: int):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.id = f"stub:{seed}:{dim}"
        self.seed = seed
        self.feature_dim = dim
        self.input_size = input_size
        n = 3 * input_size * input_size
        self._matrix = xorshift64star_signs(seed, dim * n).reshape(dim, n)
        self._scale = 1.0 / np.sqrt(n)
        self.invocations = 0
        self._lock = threading.Lock()

    def extract(self, tensor: np.ndarray) -> np.ndarray:
        with self._lock:
            self.invocations += 1
        flat = np.asarray(tensor, dtype=np.float32).reshape(-1)
        return (self._matrix @ flat) * self._scale


def make_stub_backbone(seed: int, dim: int, input_size: int) -> StubBackbone:
    return StubBackbone(seed, dim, input_size)


# --- portable graph backbone ------------------------------------------------


class OnnxBackbone(Backbone):
    """Adapter over a portable ONNX graph executed with the bundled runtime."""

    def __init__(self, desc: BackboneDescriptor):
        from .onnxgraph import OnnxGraph

        if not os.path.isfile(desc.graph_path):
            raise IoError(f"graph file not found: {desc.graph_path}")
        graph = OnnxGraph.load(desc.graph_path)
        out_dim = graph.output_dim()
        if out_dim is not None and out_dim != desc.feature_dim:
            raise DescriptorMismatch(
                f"graph {desc.graph_path} emits {out_dim} values, "
                f"descriptor {desc.id} declares {desc.feature_dim}"
            )
        self.id = desc.id
        self.feature_dim = desc.feature_dim
        self.input_size = desc.input_size
        self.descriptor = desc
        self._graph = graph
        self.invocations = 0
        self._lock = threading.Lock()

    def extract(self, tensor: np.ndarray) -> np.ndarray:
        with self._lock:
            self.invocations += 1
        batch = np.asarray(tensor, dtype=np.float32)[None, ...]
        out = self._graph.run(batch)
        got = out.reshape(-1)
        if got.shape[0] != self.feature_dim:
            raise DescriptorMismatch(
                f"graph produced {got.shape[0]} values, expected {self.feature_dim}"
            )
        return got


def load_backbone(desc: BackboneDescriptor) -> Backbone:
    """Open a portable graph and return a ready inference handle."""
    return OnnxBackbone(desc)


# --- descriptor registry ------------------------------------------------------

_LAYER_TOKENS = {
    "first_fc": FeatureLayer.FIRST_FULLY_CONNECTED,
    "avgpool": FeatureLayer.GLOBAL_AVERAGE_POOL,
}


def parse_descriptor(obj: dict, base_dir: str = ".") -> BackboneDescriptor:
    try:
        layer = _LAYER_TOKENS[obj["feature_layer"]]
        graph_path = obj["graph_path"]
        if not os.path.isabs(graph_path):
            graph_path = os.path.join(base_dir, graph_path)
        return BackboneDescriptor(
            id=obj["id"],
            graph_path=graph_path,
            feature_layer=layer,
            feature_dim=int(obj["feature_dim"]),
            input_size=int(obj["input_size"]),
            channel_means=tuple(float(v) for v in obj["channel_means"]),
            channel_stds=tuple(float(v) for v in obj["channel_stds"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise DescriptorMismatch(f"malformed descriptor entry: {e}") from e


def load_registry(path) -> dict[str, BackboneDescriptor]:
    """Read a JSON registry file: an array of descriptor objects keyed by id."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            entries = json.load(fh)
    except OSError as e:
        raise IoError(f"cannot read registry {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise DescriptorMismatch(f"registry {path} is not valid JSON: {e}") from e
    if not isinstance(entries, list):
        raise DescriptorMismatch(f"registry {path} must be a JSON array")
    base_dir = os.path.dirname(os.path.abspath(path))
    registry: dict[str, BackboneDescriptor] = {}
    for obj in entries:
        desc = parse_descriptor(obj, base_dir)
        if desc.id in registry:
            raise DescriptorMismatch(f"duplicate descriptor id {desc.id!r}")
        registry[desc.id] = desc
    return registry


def resolve_backbone(
    backbone_id: str,
    registry: dict[str, BackboneDescriptor] | None = None,
    stub_dim: int = 64,
    stub_input_size: int = 224,
) -> Backbone:
    """Turn a backbone id into a handle.

    ``stub:<seed>`` and ``stub:<seed>:<dim>`` ids build deterministic stub
    backbones; anything else is looked up in the registry.
    """
    if backbone_id.startswith("stub:"):
        parts = backbone_id.split(":")
        try:
            seed = int(parts[1])
            dim = int(parts[2]) if len(parts) > 2 else stub_dim
        except (IndexError, ValueError) as e:
            raise DescriptorMismatch(f"bad stub backbone id {backbone_id!r}") from e
        return make_stub_backbone(seed, dim, stub_input_size)
    if registry is None or backbone_id not in registry:
        raise DescriptorMismatch(f"unknown backbone id {backbone_id!r}")
    return load_backbone(registry[backbone_id])
