import json
import os

import numpy as np
import pytest

from aescomp.backbone import load_registry, resolve_backbone
from aescomp.onnxgraph import OnnxGraph
from aescomp_export import ExportError, ExportSpec
from aescomp_export.export import update_registry

from exportcases import EXPORT_SPECS


class TestSpecValidation:
    def test_unknown_model_rejected(self, tmp_path):
        with pytest.raises(ExportError):
            ExportSpec(model_id="lenet", feature_layer="avgpool", output_dir=str(tmp_path))

    def test_first_fc_invalid_for_resnet(self, tmp_path):
        with pytest.raises(ExportError):
            ExportSpec(
                model_id="resnet50-imagenet", feature_layer="first_fc", output_dir=str(tmp_path)
            )

    def test_avgpool_invalid_for_alexnet(self, tmp_path):
        with pytest.raises(ExportError):
            ExportSpec(
                model_id="alexnet-imagenet", feature_layer="avgpool", output_dir=str(tmp_path)
            )

    def test_missing_weights_file(self, tmp_path):
        spec = ExportSpec(
            model_id="resnet50-imagenet",
            feature_layer="avgpool",
            output_dir=str(tmp_path),
            weights_path=str(tmp_path / "nope.pth"),
        )
        from aescomp_export.export import build_feature_module

        with pytest.raises(ExportError):
            build_feature_module(spec)


class TestExportedArtifacts:
    def test_graph_files_exist(self, exported):
        for result in exported.values():
            assert os.path.isfile(result.graph_path)
            assert os.path.getsize(result.graph_path) > 0

    @pytest.mark.parametrize("model_id", sorted(EXPORT_SPECS))
    def test_descriptor_dim(self, exported, model_id):
        layer, dim = EXPORT_SPECS[model_id]
        desc = exported[model_id].descriptor
        assert desc["feature_dim"] == dim
        assert desc["feature_layer"] == layer
        assert desc["input_size"] == 224

    def test_descriptor_dim_equals_graph_output(self, exported):
        for result in exported.values():
            graph = OnnxGraph.load(result.graph_path)
            assert graph.output_dim() == result.descriptor["feature_dim"]

    def test_provenance_recorded(self, exported):
        for result in exported.values():
            prov = result.descriptor["provenance"]
            assert prov["source"] == result.descriptor["id"]
            assert len(prov["graph_sha256"]) == 64
            assert "init_seed" in prov
            assert result.descriptor["opset"] == 13

    def test_consumer_loads_registry(self, exported, export_dir, tmp_path):
        registry_path = tmp_path / "registry.json"
        for result in exported.values():
            update_registry(str(registry_path), result.descriptor)
        registry = load_registry(registry_path)
        assert set(registry) == set(EXPORT_SPECS)
        # graph files live next to the conftest export dir, not the registry;
        # rewrite paths so resolve_backbone can open them
        with open(registry_path, "r", encoding="utf-8") as fh:
            entries = json.load(fh)
        for entry in entries:
            entry["graph_path"] = os.path.join(str(export_dir), entry["graph_path"])
        with open(registry_path, "w", encoding="utf-8") as fh:
            json.dump(entries, fh)
        registry = load_registry(registry_path)
        backbone = resolve_backbone("resnet50-imagenet", registry)
        out = backbone.extract(np.zeros((3, 224, 224), dtype=np.float32))
        assert out.shape == (2048,)

    def test_registry_update_replaces_by_id(self, exported, tmp_path):
        path = str(tmp_path / "reg.json")
        desc = dict(exported["alexnet-imagenet"].descriptor)
        update_registry(path, desc)
        changed = dict(desc, opset=14)
        update_registry(path, changed)
        with open(path, "r", encoding="utf-8") as fh:
            entries = json.load(fh)
        assert len(entries) == 1
        assert entries[0]["opset"] == 14

    def test_registry_update_rejects_non_array(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{}")
        with pytest.raises(ExportError):
            update_registry(str(path), {"id": "x"})


class TestDeterminism:
    def test_repeated_inference_bit_stable(self, exported):
        graph = OnnxGraph.load(exported["resnet50-imagenet"].graph_path)
        rng = np.random.default_rng(5)
        x = rng.standard_normal((1, 3, 224, 224)).astype(np.float32)
        a = graph.run(x)
        b = graph.run(x)
        assert np.array_equal(a, b)

    def test_seeded_init_reproducible(self, exported, tmp_path):
        from aescomp_export.export import build_feature_module
        import torch

        spec = ExportSpec(
            model_id="resnet50-imagenet", feature_layer="avgpool", output_dir=str(tmp_path)
        )
        rebuilt = build_feature_module(spec)
        x = torch.zeros(1, 3, 224, 224)
        x[0, 0, 100:120, 100:120] = 1.0
        with torch.no_grad():
            a = exported["resnet50-imagenet"].module(x).numpy()
            b = rebuilt(x).numpy()
        assert np.array_equal(a, b)
