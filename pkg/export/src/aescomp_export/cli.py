"""Command line driver: ``aescomp-export export`` and ``aescomp-export verify``."""

from __future__ import annotations

import argparse
import json
import os
import sys

from .export import (
    ExportError,
    ExportSpec,
    build_feature_module,
    export_backbone,
    supported_models,
    update_registry,
)
from .verify import verify_export


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aescomp-export")
    sub = parser.add_subparsers(dest="command", required=True)

    exp = sub.add_parser("export", help="write an ONNX graph plus descriptor entry")
    exp.add_argument("--model", required=True, choices=sorted(supported_models()))
    exp.add_argument("--layer", required=True, choices=["first_fc", "avgpool"])
    exp.add_argument("--out", required=True, help="output directory for the graph file")
    exp.add_argument("--opset", type=int, default=13)
    exp.add_argument("--weights", default=None, help="state_dict checkpoint to load")
    exp.add_argument("--seed", type=int, default=0, help="init seed when no weights are given")
    exp.add_argument(
        "--registry",
        default=None,
        help="registry JSON to update in place (default: <out>/registry.json)",
    )
    exp.add_argument(
        "--probes", nargs="*", default=[], help="probe images; when given, verify after export"
    )

    ver = sub.add_parser("verify", help="check an exported graph against its source network")
    ver.add_argument("--registry", required=True)
    ver.add_argument("--id", required=True, help="descriptor id to verify")
    ver.add_argument("--probes", nargs="+", required=True)
    ver.add_argument("--weights", default=None, help="override the checkpoint to rebuild from")
    return parser


def _report_lines(report) -> list[str]:
    lines = [
        f"{report.backbone_id}: dims {report.observed_dim}/{report.expected_dim} "
        f"{'ok' if report.dims_match else 'MISMATCH'}"
    ]
    for i, c in enumerate(report.cosines):
        lines.append(f"  probe {i}: cosine {c:.6f}")
    lines.append("PASS" if report.passed else "FAIL")
    return lines


def _load_descriptor(registry_path: str, backbone_id: str) -> dict:
    with open(registry_path, "r", encoding="utf-8") as fh:
        entries = json.load(fh)
    for entry in entries:
        if entry.get("id") == backbone_id:
            return entry
    raise ExportError(f"id {backbone_id!r} not found in {registry_path}")


def _spec_from_descriptor(desc: dict, registry_path: str, weights: str | None) -> ExportSpec:
    prov = desc.get("provenance", {})
    return ExportSpec(
        model_id=desc["id"],
        feature_layer=desc["feature_layer"],
        output_dir=os.path.dirname(os.path.abspath(registry_path)),
        opset=int(desc.get("opset", 13)),
        weights_path=weights,
        init_seed=int(prov.get("init_seed", 0)),
    )


def _run_verify(graph_path, descriptor, probes, spec) -> int:
    report = verify_export(graph_path, descriptor, probes, build_feature_module(spec))
    print("\n".join(_report_lines(report)))
    return 0 if report.passed else 1


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "export":
            spec = ExportSpec(
                model_id=args.model,
                feature_layer=args.layer,
                output_dir=args.out,
                opset=args.opset,
                weights_path=args.weights,
                init_seed=args.seed,
            )
            result = export_backbone(spec)
            registry = args.registry or os.path.join(args.out, "registry.json")
            update_registry(registry, result.descriptor)
            print(f"wrote {result.graph_path}")
            print(f"updated {registry} ({result.descriptor['id']})")
            if args.probes:
                return _run_verify(result.graph_path, result.descriptor, args.probes, spec)
            return 0
        descriptor = _load_descriptor(args.registry, args.id)
        graph_path = os.path.join(
            os.path.dirname(os.path.abspath(args.registry)), descriptor["graph_path"]
        )
        spec = _spec_from_descriptor(descriptor, args.registry, args.weights)
        return _run_verify(graph_path, descriptor, args.probes, spec)
    except ExportError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (OSError, json.JSONDecodeError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
