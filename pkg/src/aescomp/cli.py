"""Command-line entry point.

Verbs: extract, train, predict, eval, ablate, cross-eval, stats, gc.
Every flag is long-form; a ``--config file.json`` may supply any flag
(keys named like the flags, dashes or underscores), with the command
line taking precedence. ``stub:<seed>`` (or ``stub:<seed>:<dim>``) is
accepted anywhere a backbone id is, so every verb runs without real
weights. The AESCOMP_CACHE environment variable supplies the default
feature-cache root.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .backbone import load_registry, resolve_backbone
from .composer import ViewBackbones, ViewSet, featurize_image
from .dataset import dataset_stats, parse_manifest
from .errors import AescompError, IoError
from .evalharness import (
    ExperimentConfig,
    ablation_run,
    cross_dataset,
    evaluate,
    featurize_samples,
    render_figure,
    render_report,
    run_one,
)
from .imageprep import CropSpec, PreprocessConfig, load_image
from .store import FeatureCache, load_model, save_model
from .svm import KernelParams, SmoConfig, decision_value


def _add_preprocess_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input-size", type=int, default=224)
    p.add_argument("--crop-ratio", type=float, default=0.62)
    p.add_argument("--means", type=str, default="0.485,0.456,0.406")
    p.add_argument("--stds", type=str, default="0.229,0.224,0.225")


def _add_backbone_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--content-backbone", type=str, default="stub:1")
    p.add_argument("--scene-backbone", type=str, default=None,
                   help="defaults to the content backbone")
    p.add_argument("--registry", type=str, default=None)
    p.add_argument("--stub-dim", type=int, default=64)


def _add_smo_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--svm-c", type=float, default=1.0)
    p.add_argument("--gamma", type=float, default=None,
                   help="RBF gamma; defaults to the scale heuristic")
    p.add_argument("--kkt-tol", type=float, default=1e-3)
    p.add_argument("--max-passes", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=str, default=None)
    p.add_argument("--cache", type=str, default=None)
    p.add_argument("--base-dir", type=str, default=".")
    p.add_argument("--jobs", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aescomp", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    def verb(name, **kwargs):
        p = sub.add_parser(name, **kwargs)
        _add_common_flags(p)
        return p

    p = verb("extract", help="populate the feature cache for a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--views", type=str, default="GLS")
    _add_backbone_flags(p)
    _add_preprocess_flags(p)

    p = verb("train", help="fit an SVM on a manifest's train split and save it")
    p.add_argument("--manifest", required=True)
    p.add_argument("--views", type=str, default="GLS")
    p.add_argument("--out", required=True)
    p.add_argument("--model-name", type=str, default="model")
    _add_backbone_flags(p)
    _add_preprocess_flags(p)
    _add_smo_flags(p)

    p = verb("predict", help="print label and decision value for one image")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    _add_backbone_flags(p)
    _add_preprocess_flags(p)

    p = verb("eval", help="evaluate a saved model on a manifest's test split")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", type=str, default=None)
    p.add_argument("--figure", type=str, default=None)
    p.add_argument("--model-name", type=str, default="model")
    _add_backbone_flags(p)
    _add_preprocess_flags(p)

    p = verb("ablate", help="train+evaluate one model per view set")
    p.add_argument("--manifest", required=True)
    p.add_argument("--views", type=str, default="G,G+S,G+L,G+L+S",
                   help="comma-separated view sets, e.g. G,GS,GL,GLS")
    p.add_argument("--out", type=str, default=None)
    p.add_argument("--figure", type=str, default=None)
    p.add_argument("--model-name", type=str, default="model")
    _add_backbone_flags(p)
    _add_preprocess_flags(p)
    _add_smo_flags(p)

    p = verb("cross-eval", help="train on one manifest, evaluate on another")
    p.add_argument("--train-manifest", required=True)
    p.add_argument("--test-manifest", required=True)
    p.add_argument("--views", type=str, default="G")
    p.add_argument("--out", type=str, default=None)
    p.add_argument("--figure", type=str, default=None)
    p.add_argument("--model-name", type=str, default="model")
    _add_backbone_flags(p)
    _add_preprocess_flags(p)
    _add_smo_flags(p)

    p = verb("stats", help="print label/split counts for a manifest")
    p.add_argument("--manifest", required=True)

    p = verb("gc", help="prune unreferenced cache segments")

    return parser


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    if "--config" not in argv:
        return
    path = argv[argv.index("--config") + 1]
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise IoError(f"cannot read config file {path}: {e}") from e
    defaults = {str(k).replace("-", "_"): v for k, v in cfg.items()}
    for action in parser._subparsers._group_actions:  # noqa: SLF001 - argparse has no public hook
        for sub in action.choices.values():
            known = {a.dest for a in sub._actions}
            sub.set_defaults(**{k: v for k, v in defaults.items() if k in known})


def _floats3(text: str) -> tuple[float, float, float]:
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 3:
        raise ValueError(f"expected 3 comma-separated values, got {text!r}")
    return tuple(parts)


def _preprocess_from(args) -> PreprocessConfig:
    return PreprocessConfig(
        input_size=args.input_size,
        channel_means=_floats3(args.means),
        channel_stds=_floats3(args.stds),
        crop=CropSpec(ratio=args.crop_ratio),
    )


def _backbones_from(args) -> ViewBackbones:
    registry = load_registry(args.registry) if args.registry else None
    content = resolve_backbone(
        args.content_backbone, registry, stub_dim=args.stub_dim, stub_input_size=args.input_size
    )
    scene_id = args.scene_backbone or args.content_backbone
    scene = resolve_backbone(
        scene_id, registry, stub_dim=args.stub_dim, stub_input_size=args.input_size
    )
    return ViewBackbones(content=content, scene=scene)


def _cache_from(args) -> FeatureCache | None:
    root = args.cache or os.environ.get("AESCOMP_CACHE")
    return FeatureCache(root) if root else None


def _smo_from(args) -> SmoConfig:
    return SmoConfig(
        C=args.svm_c, kkt_tol=args.kkt_tol, max_passes=args.max_passes, seed=args.seed
    )


def _kernel_from(args) -> KernelParams | None:
    return KernelParams(gamma=args.gamma) if args.gamma is not None else None


def _emit_reports(args, reports) -> None:
    text, csv_text = render_report(reports)
    sys.stderr.write(text)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(csv_text)
    else:
        sys.stdout.write(csv_text)
    if args.figure:
        render_figure(reports, args.figure)


def _experiment_config(args, train_manifest, test_manifest, view_sets) -> ExperimentConfig:
    return ExperimentConfig(
        train_manifest=train_manifest,
        test_manifest=test_manifest,
        view_sets=view_sets,
        backbones=_backbones_from(args),
        preprocess=_preprocess_from(args),
        smo=_smo_from(args),
        kernel=_kernel_from(args),
        cache=_cache_from(args),
        base_dir=args.base_dir,
        jobs=args.jobs,
        model_name=args.model_name,
    )


def run_command(args) -> int:
    if args.verb == "extract":
        manifest = parse_manifest(args.manifest)
        cache = _cache_from(args)
        if cache is None:
            raise IoError("extract needs a cache: pass --cache or set AESCOMP_CACHE")
        featurize_samples(
            manifest.samples,
            ViewSet.parse(args.views),
            _backbones_from(args),
            _preprocess_from(args),
            cache,
            args.base_dir,
            args.jobs,
        )
        sys.stderr.write(f"cached features for {len(manifest.samples)} images\n")
        return 0

    if args.verb == "train":
        from .dataset import Split
        from .evalharness import train_on_features

        manifest = parse_manifest(args.manifest)
        samples = manifest.subset(Split.TRAIN) or manifest.samples
        pairs = featurize_samples(
            samples,
            ViewSet.parse(args.views),
            _backbones_from(args),
            _preprocess_from(args),
            _cache_from(args),
            args.base_dir,
            args.jobs,
        )
        model = train_on_features(pairs, _smo_from(args), _kernel_from(args))
        save_model(model, args.out)
        flag = "" if model.converged else " (not converged)"
        sys.stderr.write(f"trained on {len(pairs)} samples, saved to {args.out}{flag}\n")
        return 0

    if args.verb == "predict":
        model = load_model(args.model)
        if model.expected_provenance is None:
            raise IoError("model records no provenance; cannot rebuild its backbones")
        views = ViewSet(tuple(v for _, v, _ in model.expected_provenance))
        registry = load_registry(args.registry) if args.registry else None
        by_view = {}
        for backbone_id, view, dim in model.expected_provenance:
            by_view[view] = resolve_backbone(
                backbone_id, registry, stub_dim=dim, stub_input_size=args.input_size
            )
        from .imageprep import ViewKind

        content = by_view.get(ViewKind.GLOBAL) or by_view.get(ViewKind.LOCAL)
        scene = by_view.get(ViewKind.SCENE) or content
        img = load_image(args.image)
        feat = featurize_image(
            img, views, ViewBackbones(content=content, scene=scene), _preprocess_from(args),
            _cache_from(args),
        )
        value = decision_value(model, feat)
        label = "high" if value >= 0.0 else "low"
        sys.stdout.write(f"{label} {value:.6f}\n")
        return 0

    if args.verb == "eval":
        from .dataset import Split

        model = load_model(args.model)
        manifest = parse_manifest(args.manifest)
        samples = manifest.subset(Split.TEST) or manifest.samples
        if model.expected_provenance is None:
            raise IoError("model records no provenance; cannot evaluate")
        views = ViewSet(tuple(v for _, v, _ in model.expected_provenance))
        pairs = featurize_samples(
            samples, views, _backbones_from(args), _preprocess_from(args),
            _cache_from(args), args.base_dir, args.jobs,
        )
        report = evaluate(model, pairs, dataset=manifest.name, model_name=args.model_name)
        _emit_reports(args, [report])
        return 0

    if args.verb == "ablate":
        manifest = parse_manifest(args.manifest)
        view_sets = [ViewSet.parse(v) for v in args.views.split(",")]
        cfg = _experiment_config(args, manifest, manifest, view_sets)
        _emit_reports(args, ablation_run(cfg))
        return 0

    if args.verb == "cross-eval":
        train_m = parse_manifest(args.train_manifest)
        test_m = parse_manifest(args.test_manifest)
        cfg = _experiment_config(args, train_m, test_m, [ViewSet.parse(args.views)])
        _emit_reports(args, [cross_dataset(train_m, test_m, cfg)])
        return 0

    if args.verb == "stats":
        manifest = parse_manifest(args.manifest)
        stats = dataset_stats(manifest)
        for key in ("high", "low", "train", "test"):
            sys.stdout.write(f"{key},{stats[key]}\n")
        return 0

    if args.verb == "gc":
        cache = _cache_from(args)
        if cache is None:
            raise IoError("gc needs a cache: pass --cache or set AESCOMP_CACHE")
        removed = cache.gc()
        sys.stderr.write(f"removed {len(removed)} unreferenced segments\n")
        return 0

    raise AssertionError(f"unhandled verb {args.verb}")


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
        return run_command(args)
    except AescompError as e:
        sys.stderr.write(f"{type(e).__name__}: {e}\n")
        return 1
    except (ValueError, OSError) as e:
        sys.stderr.write(f"{type(e).__name__}: {e}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
