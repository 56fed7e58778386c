import numpy as np
import pytest

from aescomp.imageprep import RawImage
from aescomp_export import ExportError, verify_export

from exportcases import EXPORT_SPECS


def test_parity_passes_on_probe_files(exported, probe_paths):
    result = exported["resnet50-imagenet"]
    report = verify_export(result.graph_path, result.descriptor, probe_paths, result.module)
    assert report.passed
    assert len(report.cosines) == 3
    assert all(c >= 0.999 for c in report.cosines)
    assert report.expected_dim == report.observed_dim == 2048


def test_parity_passes_first_fc(exported, probe_paths):
    result = exported["alexnet-imagenet"]
    report = verify_export(result.graph_path, result.descriptor, probe_paths, result.module)
    assert report.passed
    assert report.observed_dim == 4096


def test_accepts_in_memory_images(exported):
    result = exported["resnet50-imagenet"]
    rng = np.random.default_rng(3)
    probes = [
        RawImage(pixels=rng.integers(0, 256, size=(100, 130, 3), dtype=np.uint8))
        for _ in range(3)
    ]
    report = verify_export(result.graph_path, result.descriptor, probes, result.module)
    assert report.passed


def test_wrong_dim_is_fail_report_not_exception(exported, probe_paths):
    result = exported["resnet50-imagenet"]
    lying = dict(result.descriptor, feature_dim=4096)
    report = verify_export(result.graph_path, lying, probe_paths, result.module)
    assert not report.passed
    assert not report.dims_match
    assert report.cosines == ()


def test_mismatched_reference_fails_threshold(exported, probe_paths, tmp_path):
    # graph from one init seed, source network from another: features disagree
    from aescomp_export import ExportSpec
    from aescomp_export.export import build_feature_module

    graph_side = exported["resnet50-imagenet"]
    other = build_feature_module(
        ExportSpec(
            model_id="resnet50-imagenet",
            feature_layer="avgpool",
            output_dir=str(tmp_path),
            init_seed=99,
        )
    )
    report = verify_export(graph_side.graph_path, graph_side.descriptor, probe_paths, other)
    assert report.dims_match
    assert not report.passed


def test_too_few_probes_rejected(exported, probe_paths):
    result = exported["resnet50-imagenet"]
    with pytest.raises(ExportError):
        verify_export(result.graph_path, result.descriptor, probe_paths[:2], result.module)


def test_every_architecture_reaches_threshold(exported, probe_paths):
    for model_id in EXPORT_SPECS:
        result = exported[model_id]
        report = verify_export(result.graph_path, result.descriptor, probe_paths, result.module)
        assert report.passed, f"{model_id}: {report.cosines}"
