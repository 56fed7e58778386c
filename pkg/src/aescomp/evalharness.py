"""Train/evaluate over manifests: ablation matrices, cross-dataset runs,
and report rendering (text table, CSV, and bar-chart figures).

Full-scale runs (the published AVA/CUHKPQ numbers) go through exactly the
same code paths as toy fixtures; only the manifests differ.
"""

from __future__ import annotations

import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .composer import CompositeFeature, ViewBackbones, ViewSet, featurize_image
from .dataset import DatasetManifest, Label, Sample, Split
from .errors import ModelMismatch
from .imageprep import PreprocessConfig, load_image
from .svm import KernelParams, SmoConfig, SvmModel, decision_values, train_smo

REPORT_CSV_HEADER = "model,view_set,dataset,accuracy,n_test,tp,fp,tn,fn,converged"


@dataclass(frozen=True)
class EvalReport:
    model: str
    view_set: ViewSet
    dataset: str
    accuracy: float
    n_test: int
    tp: int
    fp: int
    tn: int
    fn: int
    converged: bool


@dataclass
class ExperimentConfig:
    train_manifest: DatasetManifest
    test_manifest: DatasetManifest
    view_sets: list[ViewSet]
    backbones: ViewBackbones
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    smo: SmoConfig = field(default_factory=SmoConfig)
    kernel: KernelParams | None = None
    cache: object = None
    base_dir: str = "."
    jobs: int = 1
    model_name: str = "model"

    def __post_init__(self) -> None:
        if not self.train_manifest.samples or not self.test_manifest.samples:
            raise ValueError("manifests must be nonempty")
        if not self.view_sets:
            raise ValueError("at least one view set is required")


def featurize_samples(
    samples,
    views: ViewSet,
    backbones: ViewBackbones,
    cfg: PreprocessConfig,
    cache=None,
    base_dir: str = ".",
    jobs: int = 1,
) -> list[tuple[CompositeFeature, Label]]:
    """Extract composite features for every sample, in manifest order."""

    def one(sample: Sample) -> tuple[CompositeFeature, Label]:
        path = sample.image_path
        if not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        img = load_image(path)
        return featurize_image(img, views, backbones, cfg, cache), sample.label

    if jobs <= 1:
        return [one(s) for s in samples]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(one, samples))


def train_on_features(
    pairs: list[tuple[CompositeFeature, Label]],
    smo: SmoConfig,
    kernel: KernelParams | None = None,
) -> SvmModel:
    provenance = pairs[0][0].provenance
    for feat, _ in pairs:
        if feat.provenance != provenance:
            raise ModelMismatch("training composites have inconsistent provenance")
    x = np.stack([feat.values for feat, _ in pairs]).astype(np.float64)
    y = np.asarray([label.sign() for _, label in pairs], dtype=np.float64)
    return train_smo(x, y, kernel=kernel, cfg=smo, expected_provenance=provenance)


def evaluate(
    m: SvmModel,
    test: list[tuple[CompositeFeature, Label]],
    dataset: str = "",
    model_name: str = "model",
) -> EvalReport:
    """Exact accuracy and confusion counts; High is the positive class."""
    for feat, _ in test:
        if m.expected_provenance is not None and feat.provenance != m.expected_provenance:
            raise ModelMismatch(
                f"test composite provenance {feat.provenance} does not match model"
            )
    x = np.stack([feat.values for feat, _ in test]).astype(np.float64)
    predicted_high = decision_values(m, x) >= 0.0
    actual_high = np.asarray([label is Label.HIGH for _, label in test])
    tp = int(np.sum(predicted_high & actual_high))
    fp = int(np.sum(predicted_high & ~actual_high))
    tn = int(np.sum(~predicted_high & ~actual_high))
    fn = int(np.sum(~predicted_high & actual_high))
    n = len(test)
    view_set = test[0][0].view_set if test else ViewSet.parse("G")
    return EvalReport(
        model=model_name,
        view_set=view_set,
        dataset=dataset,
        accuracy=(tp + tn) / n,
        n_test=n,
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
        converged=m.converged,
    )


def run_one(cfg: ExperimentConfig, views: ViewSet) -> tuple[SvmModel, EvalReport]:
    train_samples = cfg.train_manifest.subset(Split.TRAIN) or cfg.train_manifest.samples
    test_samples = cfg.test_manifest.subset(Split.TEST) or cfg.test_manifest.samples
    train_pairs = featurize_samples(
        train_samples, views, cfg.backbones, cfg.preprocess, cfg.cache, cfg.base_dir, cfg.jobs
    )
    test_pairs = featurize_samples(
        test_samples, views, cfg.backbones, cfg.preprocess, cfg.cache, cfg.base_dir, cfg.jobs
    )
    model = train_on_features(train_pairs, cfg.smo, cfg.kernel)
    report = evaluate(model, test_pairs, dataset=cfg.test_manifest.name, model_name=cfg.model_name)
    return model, report


def ablation_run(cfg: ExperimentConfig) -> list[EvalReport]:
    """One train+evaluate cycle per view set, sharing the feature cache."""
    return [run_one(cfg, views)[1] for views in cfg.view_sets]


def cross_dataset(
    train_m: DatasetManifest,
    test_m: DatasetManifest,
    cfg: ExperimentConfig,
) -> EvalReport:
    """Train on all of one manifest, evaluate on all of another."""
    views = cfg.view_sets[0]
    train_pairs = featurize_samples(
        train_m.samples, views, cfg.backbones, cfg.preprocess, cfg.cache, cfg.base_dir, cfg.jobs
    )
    test_pairs = featurize_samples(
        test_m.samples, views, cfg.backbones, cfg.preprocess, cfg.cache, cfg.base_dir, cfg.jobs
    )
    model = train_on_features(train_pairs, cfg.smo, cfg.kernel)
    return evaluate(model, test_pairs, dataset=test_m.name, model_name=cfg.model_name)


# --- rendering --------------------------------------------------------------------


def render_report(reports: list[EvalReport]) -> tuple[str, str]:
    """Human-readable table plus machine-readable CSV, one row per report.

    Accuracy renders as a percentage with 2 decimals; rows from
    non-converged models are flagged with ``*``.
    """
    csv_lines = [REPORT_CSV_HEADER]
    text = io.StringIO()
    text.write(f"{'model':<24} {'views':<8} {'dataset':<16} {'acc %':>8} {'n':>7}\n")
    for r in reports:
        flag = "" if r.converged else "*"
        text.write(
            f"{r.model:<24} {r.view_set.label():<8} {r.dataset:<16} "
            f"{100.0 * r.accuracy:>7.2f}{flag or ' '} {r.n_test:>7}\n"
        )
        csv_lines.append(
            ",".join(
                [
                    r.model,
                    r.view_set.label(),
                    r.dataset,
                    format(r.accuracy, ".6f"),
                    str(r.n_test),
                    str(r.tp),
                    str(r.fp),
                    str(r.tn),
                    str(r.fn),
                    "true" if r.converged else "false",
                ]
            )
        )
    return text.getvalue(), "\n".join(csv_lines) + "\n"


def render_figure(reports: list[EvalReport], path) -> None:
    """Bar chart of accuracy per (view set, dataset) cell, written to a file."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    labels = [f"{r.view_set.label()}\n{r.dataset}" for r in reports]
    values = [100.0 * r.accuracy for r in reports]
    fig, ax = plt.subplots(figsize=(max(4.0, 1.2 * len(reports)), 3.5))
    bars = ax.bar(range(len(reports)), values, color="#4878cf")
    ax.set_xticks(range(len(reports)))
    ax.set_xticklabels(labels, fontsize=8)
    ax.set_ylabel("accuracy (%)")
    ax.set_ylim(0, 100)
    for bar, value in zip(bars, values):
        ax.text(
            bar.get_x() + bar.get_width() / 2, value + 1, f"{value:.2f}",
            ha="center", va="bottom", fontsize=8,
        )
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
