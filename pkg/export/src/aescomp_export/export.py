"""Export torchvision backbones as portable ONNX graphs.

Each export writes a graph file truncated at the designated feature layer
plus a descriptor entry the ``aescomp`` package can load verbatim. Weights
are taken from a checkpoint when one is given; otherwise the network is
built with a seeded random initialization so that a verification run can
reconstruct the identical source model.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass

import torch

from aescomp.imageprep import DEFAULT_INPUT_SIZE, DEFAULT_MEANS, DEFAULT_STDS


class ExportError(Exception):
    """The requested export cannot be produced."""


# model id -> (torchvision builder name, classifier classes, valid feature layers)
_ARCHS = {
    "alexnet-imagenet": ("alexnet", 1000, {"first_fc": 4096}),
    "vgg16-imagenet": ("vgg16", 1000, {"first_fc": 4096}),
    "resnet50-imagenet": ("resnet50", 1000, {"avgpool": 2048}),
    "resnet50-places365": ("resnet50", 365, {"avgpool": 2048}),
}


def supported_models() -> dict[str, tuple[str, ...]]:
    """Map each exportable model id to its valid feature layers."""
    return {mid: tuple(layers) for mid, (_, _, layers) in _ARCHS.items()}


@dataclass(frozen=True)
class ExportSpec:
    model_id: str
    feature_layer: str
    output_dir: str
    opset: int = 13
    weights_path: str | None = None
    init_seed: int = 0

    def __post_init__(self) -> None:
        if self.model_id not in _ARCHS:
            raise ExportError(
                f"unknown model id {self.model_id!r}; supported: {sorted(_ARCHS)}"
            )
        _, _, layers = _ARCHS[self.model_id]
        if self.feature_layer not in layers:
            raise ExportError(
                f"feature layer {self.feature_layer!r} is not valid for "
                f"{self.model_id!r} (valid: {sorted(layers)})"
            )


@dataclass(frozen=True)
class ExportResult:
    graph_path: str
    descriptor: dict
    module: torch.nn.Module


def _load_state_dict(net: torch.nn.Module, path: str) -> None:
    try:
        state = torch.load(path, map_location="cpu", weights_only=True)
    except (OSError, RuntimeError, ValueError) as e:
        raise ExportError(f"cannot load weights from {path}: {e}") from e
    if isinstance(state, dict) and "state_dict" in state:
        state = state["state_dict"]
    # checkpoints saved from DataParallel wrappers prefix every key
    state = {k.removeprefix("module."): v for k, v in state.items()}
    try:
        net.load_state_dict(state)
    except RuntimeError as e:
        raise ExportError(f"weights in {path} do not fit the architecture: {e}") from e


def build_feature_module(spec: ExportSpec) -> torch.nn.Module:
    """Assemble the truncated network emitting the designated layer.

    The module is returned in eval mode; first-FC outputs are taken after
    the nonlinearity that follows the layer.
    """
    import torchvision.models as models

    builder_name, num_classes, _ = _ARCHS[spec.model_id]
    torch.manual_seed(spec.init_seed)
    net = getattr(models, builder_name)(weights=None, num_classes=num_classes)
    if spec.weights_path is not None:
        _load_state_dict(net, spec.weights_path)
    if spec.feature_layer == "avgpool":
        trunk = torch.nn.Sequential(*list(net.children())[:-1], torch.nn.Flatten(1))
    elif builder_name == "alexnet":
        # classifier starts with Dropout; the first Linear sits at index 1
        trunk = torch.nn.Sequential(
            net.features, net.avgpool, torch.nn.Flatten(1),
            net.classifier[1], net.classifier[2],
        )
    else:  # vgg16
        trunk = torch.nn.Sequential(
            net.features, net.avgpool, torch.nn.Flatten(1),
            net.classifier[0], net.classifier[1],
        )
    return trunk.eval()


def _patch_legacy_exporter() -> None:
    # The exporter's final hook only needs the onnx package to round-trip
    # the serialized proto (and to merge onnxscript functions, which these
    # graphs never contain). Replacing it with identity lets the export run
    # without onnx installed.
    try:
        from torch.onnx._internal.torchscript_exporter import onnx_proto_utils
    except ImportError:
        return
    onnx_proto_utils._add_onnxscript_fn = lambda model_bytes, custom_opsets: model_bytes


def _file_sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def export_backbone(spec: ExportSpec) -> ExportResult:
    """Write the ONNX graph and return it with its descriptor entry.

    The descriptor's extra ``opset`` and ``provenance`` fields record how
    the graph was produced; the consumer ignores them.
    """
    module = build_feature_module(spec)
    _, _, layers = _ARCHS[spec.model_id]
    feature_dim = layers[spec.feature_layer]
    size = DEFAULT_INPUT_SIZE

    os.makedirs(spec.output_dir, exist_ok=True)
    graph_name = f"{spec.model_id}_{spec.feature_layer}.onnx"
    graph_path = os.path.join(spec.output_dir, graph_name)
    example = torch.zeros(1, 3, size, size)
    _patch_legacy_exporter()
    try:
        torch.onnx.export(
            module,
            (example,),
            graph_path,
            dynamo=False,
            opset_version=spec.opset,
            input_names=["input"],
            output_names=["features"],
            do_constant_folding=True,
        )
    except (RuntimeError, ValueError, torch.onnx.errors.OnnxExporterError) as e:
        raise ExportError(f"export of {spec.model_id} failed: {e}") from e

    if spec.weights_path is not None:
        source = {"weights_sha256": _file_sha256(spec.weights_path)}
    else:
        source = {"init_seed": spec.init_seed}
    descriptor = {
        "id": spec.model_id,
        "graph_path": graph_name,
        "feature_layer": spec.feature_layer,
        "feature_dim": feature_dim,
        "input_size": size,
        "channel_means": list(DEFAULT_MEANS),
        "channel_stds": list(DEFAULT_STDS),
        "opset": spec.opset,
        "provenance": {
            "source": spec.model_id,
            "graph_sha256": _file_sha256(graph_path),
            **source,
        },
    }
    return ExportResult(graph_path=graph_path, descriptor=descriptor, module=module)


def update_registry(registry_path: str, descriptor: dict) -> None:
    """Insert or replace one descriptor in a registry JSON array on disk."""
    entries: list[dict] = []
    if os.path.exists(registry_path):
        try:
            with open(registry_path, "r", encoding="utf-8") as fh:
                entries = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise ExportError(f"cannot read registry {registry_path}: {e}") from e
        if not isinstance(entries, list):
            raise ExportError(f"registry {registry_path} must be a JSON array")
    entries = [e for e in entries if e.get("id") != descriptor["id"]]
    entries.append(descriptor)
    with open(registry_path, "w", encoding="utf-8") as fh:
        json.dump(entries, fh, indent=2)
        fh.write("\n")
