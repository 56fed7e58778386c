"""Feature-parity verification for exported graphs.

Runs probe images through both the source torch module and the portable
graph (executed by aescomp's bundled runtime) and compares the feature
vectors by cosine similarity.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import torch

from aescomp.backbone import parse_descriptor
from aescomp.imageprep import (
    PreprocessConfig,
    RawImage,
    ViewKind,
    load_image,
    prepare_view,
)
from aescomp.onnxgraph import OnnxGraph

from .export import ExportError

COSINE_THRESHOLD = 0.999
MIN_PROBES = 3


@dataclass(frozen=True)
class ParityReport:
    backbone_id: str
    expected_dim: int
    observed_dim: int
    cosines: tuple[float, ...]
    threshold: float

    @property
    def dims_match(self) -> bool:
        return self.expected_dim == self.observed_dim

    @property
    def passed(self) -> bool:
        return (
            self.dims_match
            and len(self.cosines) >= MIN_PROBES
            and all(c >= self.threshold for c in self.cosines)
        )


def _probe_tensor(probe, cfg: PreprocessConfig) -> np.ndarray:
    img = probe if isinstance(probe, RawImage) else load_image(probe)
    return prepare_view(img, ViewKind.GLOBAL, cfg)


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def verify_export(
    graph_path,
    descriptor: dict,
    probes,
    reference: torch.nn.Module,
    threshold: float = COSINE_THRESHOLD,
) -> ParityReport:
    """Compare source-framework features with portable-graph features.

    ``probes`` are image paths or RawImage instances, at least three. A
    dimension mismatch between descriptor and graph yields a failing report
    rather than an exception, with no cosines attached.
    """
    probes = list(probes)
    if len(probes) < MIN_PROBES:
        raise ExportError(f"need at least {MIN_PROBES} probe images, got {len(probes)}")
    desc = parse_descriptor(descriptor, base_dir=os.path.dirname(os.path.abspath(graph_path)))
    graph = OnnxGraph.load(graph_path)
    cfg = PreprocessConfig(
        input_size=desc.input_size,
        channel_means=desc.channel_means,
        channel_stds=desc.channel_stds,
    )
    reference = reference.eval()
    observed_dim = -1
    cosines: list[float] = []
    for probe in probes:
        tensor = _probe_tensor(probe, cfg)
        got = np.asarray(graph.run(tensor[None, ...]), dtype=np.float32).reshape(-1)
        observed_dim = int(got.shape[0])
        if observed_dim != desc.feature_dim:
            return ParityReport(
                backbone_id=desc.id,
                expected_dim=desc.feature_dim,
                observed_dim=observed_dim,
                cosines=(),
                threshold=threshold,
            )
        with torch.no_grad():
            want = reference(torch.from_numpy(tensor[None, ...])).numpy().reshape(-1)
        cosines.append(_cosine(want.astype(np.float64), got.astype(np.float64)))
    return ParityReport(
        backbone_id=desc.id,
        expected_dim=desc.feature_dim,
        observed_dim=observed_dim,
        cosines=tuple(cosines),
        threshold=threshold,
    )
