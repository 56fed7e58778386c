"""Dataset manifests: labeled samples with train/test split assignment.

The artifact never downloads datasets; callers supply a manifest CSV
(UTF-8, header row) in one of two forms:

    image_path,label,split      label in {high, low}
    image_path,score,split      score in [1, 10], binarized on parse

split is ``train``, ``test`` or empty (to be filled by split_balanced).
A leading ``# delta=<x>`` comment line sets the score binarization band.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .errors import IoError, ManifestError, SplitError


class Label(Enum):
    HIGH = "high"
    LOW = "low"

    def sign(self) -> int:
        return 1 if self is Label.HIGH else -1


class Split(Enum):
    TRAIN = "train"
    TEST = "test"


@dataclass(frozen=True)
class Sample:
    image_path: str
    label: Label
    split: Split | None = None
    mean_score: float | None = None


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    samples: tuple[Sample, ...]

    def subset(self, split: Split) -> tuple[Sample, ...]:
        return tuple(s for s in self.samples if s.split is split)


def binarize_score(mean_score: float, delta: float = 0.0) -> Label | None:
    """Threshold a mean score at 5 with a discard band of +-delta.

    Returns None (discard) inside the band. With delta = 0 a score of
    exactly 5 is assigned Low so counts stay deterministic.
    """
    if not (1.0 <= mean_score <= 10.0):
        raise ManifestError(f"score {mean_score} outside [1, 10]")
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    if mean_score > 5.0 + delta:
        return Label.HIGH
    if delta == 0.0:
        return Label.LOW
    if mean_score < 5.0 - delta:
        return Label.LOW
    return None


_SPLIT_TOKENS = {"train": Split.TRAIN, "test": Split.TEST, "": None}


def parse_manifest_text(text: str, name: str = "manifest") -> DatasetManifest:
    delta = 0.0
    lines = text.splitlines()
    start = 0
    for line in lines:
        stripped = line.strip()
        if stripped.startswith("#"):
            start += 1
            body = stripped.lstrip("#").strip()
            if body.startswith("delta="):
                try:
                    delta = float(body.split("=", 1)[1])
                except ValueError as e:
                    raise ManifestError(f"bad delta comment {stripped!r}") from e
        else:
            break
    reader = csv.DictReader(io.StringIO("\n".join(lines[start:])))
    fields = reader.fieldnames or []
    if "image_path" not in fields or "split" not in fields:
        raise ManifestError(f"manifest header must name image_path and split, got {fields}")
    scored = "score" in fields
    if not scored and "label" not in fields:
        raise ManifestError("manifest needs a label or score column")

    samples: list[Sample] = []
    seen: set[str] = set()
    for lineno, row in enumerate(reader, start=start + 2):
        path = (row.get("image_path") or "").strip()
        if not path:
            raise ManifestError(f"line {lineno}: empty image_path")
        if path in seen:
            raise ManifestError(f"line {lineno}: duplicate image_path {path!r}")
        seen.add(path)
        split_token = (row.get("split") or "").strip().lower()
        if split_token not in _SPLIT_TOKENS:
            raise ManifestError(f"line {lineno}: bad split {split_token!r}")
        split = _SPLIT_TOKENS[split_token]
        score: float | None = None
        if scored and (row.get("score") or "").strip():
            try:
                score = float(row["score"])
            except ValueError as e:
                raise ManifestError(f"line {lineno}: bad score {row['score']!r}") from e
        label_token = (row.get("label") or "").strip().lower()
        if label_token:
            if label_token not in ("high", "low"):
                raise ManifestError(f"line {lineno}: bad label {label_token!r}")
            label = Label(label_token)
        elif score is not None:
            label = binarize_score(score, delta)
            if label is None:
                continue  # inside the discard band
        else:
            raise ManifestError(f"line {lineno}: neither label nor score present")
        samples.append(Sample(image_path=path, label=label, split=split, mean_score=score))
    return DatasetManifest(name=name, samples=tuple(samples))


def parse_manifest(path) -> DatasetManifest:
    import os

    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise ManifestError(f"cannot read manifest {path}: {e}") from e
    name = os.path.splitext(os.path.basename(str(path)))[0]
    return parse_manifest_text(text, name=name)


def dataset_stats(m: DatasetManifest) -> dict[str, int]:
    return {
        "high": sum(1 for s in m.samples if s.label is Label.HIGH),
        "low": sum(1 for s in m.samples if s.label is Label.LOW),
        "train": sum(1 for s in m.samples if s.split is Split.TRAIN),
        "test": sum(1 for s in m.samples if s.split is Split.TEST),
    }


def split_balanced(m: DatasetManifest, train_fraction: float, seed: int) -> DatasetManifest:
    """Assign splits per class by seeded shuffle.

    Per-class train count is round-half-up(train_fraction * class_size).
    Existing split assignments are overwritten.
    """
    if not (0.0 < train_fraction < 1.0):
        raise ValueError("train_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    assigned: dict[int, Split] = {}
    for label in (Label.HIGH, Label.LOW):
        idx = [i for i, s in enumerate(m.samples) if s.label is label]
        if len(idx) < 2:
            raise SplitError(f"class {label.value} has {len(idx)} members, need >= 2")
        order = rng.permutation(len(idx))
        n_train = int(np.floor(train_fraction * len(idx) + 0.5))
        for rank, j in enumerate(order):
            assigned[idx[j]] = Split.TRAIN if rank < n_train else Split.TEST
    samples = tuple(replace(s, split=assigned[i]) for i, s in enumerate(m.samples))
    return DatasetManifest(name=m.name, samples=samples)


def select_score_extremes(m: DatasetManifest, per_class: int) -> DatasetManifest:
    """Balanced selection by mean score: the ``per_class`` highest-scoring
    samples become High and the ``per_class`` lowest become Low (the AVA2
    construction convention). Requires scores on every selected sample."""
    scored = [s for s in m.samples if s.mean_score is not None]
    if len(scored) < 2 * per_class:
        raise SplitError(f"need {2 * per_class} scored samples, have {len(scored)}")
    order = sorted(scored, key=lambda s: (s.mean_score, s.image_path))
    low = [replace(s, label=Label.LOW) for s in order[:per_class]]
    high = [replace(s, label=Label.HIGH) for s in order[-per_class:]]
    return DatasetManifest(name=m.name, samples=tuple(high + low))


def write_manifest(m: DatasetManifest, path) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["image_path", "label", "split"])
            for s in m.samples:
                writer.writerow([s.image_path, s.label.value, s.split.value if s.split else ""])
    except OSError as e:
        raise IoError(f"cannot write manifest {path}: {e}") from e
