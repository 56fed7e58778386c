"""Composite features: ordered concatenation of per-view feature vectors."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .backbone import Backbone, FeatureVector, extract_features
from .errors import CacheError, CompositionError
from .imageprep import PreprocessConfig, RawImage, ViewKind, prepare_view

log = logging.getLogger(__name__)

# Canonical view order: global, local, scene. Serialization and model
# compatibility depend on it.
CANONICAL_ORDER = (ViewKind.GLOBAL, ViewKind.LOCAL, ViewKind.SCENE)

_VIEW_LETTERS = {"G": ViewKind.GLOBAL, "L": ViewKind.LOCAL, "S": ViewKind.SCENE}


@dataclass(frozen=True)
class ViewSet:
    """Nonempty, duplicate-free subset of the three views in canonical order."""

    views: tuple[ViewKind, ...]

    def __post_init__(self) -> None:
        if not self.views:
            raise CompositionError("view set must be nonempty")
        if len(set(self.views)) != len(self.views):
            raise CompositionError("duplicate view in view set")
        ordered = tuple(v for v in CANONICAL_ORDER if v in self.views)
        object.__setattr__(self, "views", ordered)

    @classmethod
    def parse(cls, text: str) -> "ViewSet":
        """Parse compact notation like "GLS", "G+L+S" or "gl"."""
        letters = [c for c in text.upper() if c not in "+, "]
        try:
            return cls(tuple(_VIEW_LETTERS[c] for c in letters))
        except KeyError as e:
            raise CompositionError(f"unknown view letter {e} in {text!r}") from e

    def label(self) -> str:
        return "+".join(v.value[0].upper() for v in self.views)

    def __iter__(self):
        return iter(self.views)

    def __len__(self) -> int:
        return len(self.views)


@dataclass(frozen=True)
class CompositeFeature:
    view_set: ViewSet
    values: np.ndarray
    provenance: tuple[tuple[str, ViewKind, int], ...]

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    def slice_view(self, view: ViewKind) -> np.ndarray:
        """Recover one constituent vector bit-exactly from the concatenation."""
        offset = 0
        for backbone_id, v, dim in self.provenance:
            if v is view:
                return self.values[offset : offset + dim]
            offset += dim
        raise CompositionError(f"view {view} not present in composite")


def compose(parts: list[FeatureVector], views: ViewSet) -> CompositeFeature:
    """Concatenate per-view vectors in canonical view order."""
    if len(parts) != len(views):
        raise CompositionError(f"{len(parts)} vectors for {len(views)} views")
    by_view: dict[ViewKind, FeatureVector] = {}
    for part, view in zip(parts, views):
        if part.view is not view:
            raise CompositionError(f"vector for {part.view} given where {view} expected")
        if part.view in by_view:
            raise CompositionError(f"duplicate vector for view {part.view}")
        by_view[part.view] = part
    ordered = [by_view[v] for v in views]
    values = np.concatenate([p.values for p in ordered]).astype(np.float32)
    provenance = tuple((p.backbone_id, p.view, p.dim) for p in ordered)
    return CompositeFeature(view_set=views, values=values, provenance=provenance)


@dataclass(frozen=True)
class ViewBackbones:
    """Backbone assignment: global and local share the content backbone,
    the scene view gets its own."""

    content: Backbone
    scene: Backbone

    def for_view(self, view: ViewKind) -> Backbone:
        return self.scene if view is ViewKind.SCENE else self.content


def featurize_image(
    img: RawImage,
    views: ViewSet,
    backbones: ViewBackbones,
    cfg: PreprocessConfig,
    cache=None,
) -> CompositeFeature:
    """Extract (or fetch cached) per-view features and compose them.

    Cache failures degrade to recomputation with a warning; they never
    change the result.
    """
    parts: list[FeatureVector] = []
    for view in views:
        backbone = backbones.for_view(view)
        key = None
        if cache is not None:
            key = cache.make_key(img, backbone.id, view, cfg)
            try:
                hit = cache.get(key)
            except CacheError as e:
                log.warning("feature cache read failed, recomputing: %s", e)
                hit = None
            if hit is not None:
                parts.append(FeatureVector(backbone_id=backbone.id, view=view, values=hit))
                continue
        tensor = prepare_view(img, view, cfg)
        vec = extract_features(backbone, tensor, view)
        if cache is not None and key is not None:
            try:
                cache.put(key, vec.values)
            except CacheError as e:
                log.warning("feature cache write failed: %s", e)
        parts.append(vec)
    return compose(parts, views)
