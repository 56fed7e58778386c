import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aescomp.backbone import (
    BackboneDescriptor,
    FeatureLayer,
    FeatureVector,
    StubBackbone,
    extract_features,
    load_backbone,
    load_registry,
    make_stub_backbone,
    resolve_backbone,
    xorshift64star_signs,
)
from aescomp.errors import DescriptorMismatch, IoError, NumericsError, ShapeError
from aescomp.imageprep import ViewKind
from onnx_builder import write_image_feature_model


def reference_xorshift_signs(seed, count):
    """Independent restatement of the generator recipe."""
    mask = (1 << 64) - 1
    x = seed & mask
    if x == 0:
        x = 0x9E3779B97F4A7C15
    signs = []
    for _ in range(count):
        x = x ^ (x >> 12)
        x = (x ^ (x << 25)) & mask
        x = x ^ (x >> 27)
        word = (x * 0x2545F4914F6CDD1D) & mask
        signs.append(1.0 if word & (1 << 63) else -1.0)
    return signs


class TestXorshiftSigns:
    def test_matches_independent_implementation_seed1(self):
        got = xorshift64star_signs(1, 24)
        assert got.tolist() == reference_xorshift_signs(1, 24)

    @given(seed=st.integers(0, 2**64 - 1))
    @settings(max_examples=30, deadline=None)
    def test_matches_independent_implementation(self, seed):
        assert xorshift64star_signs(seed, 16).tolist() == reference_xorshift_signs(seed, 16)

    def test_values_are_signs(self):
        vals = set(xorshift64star_signs(99, 200).tolist())
        assert vals == {1.0, -1.0}


class TestStubBackbone:
    def test_zero_tensor_zero_vector(self):
        bb = make_stub_backbone(5, 8, 4)
        out = bb.extract(np.zeros((3, 4, 4), dtype=np.float32))
        assert np.all(out == 0.0)

    def test_same_seed_same_output(self):
        rng = np.random.default_rng(0)
        t = rng.normal(size=(3, 4, 4)).astype(np.float32)
        a = make_stub_backbone(3, 6, 4).extract(t)
        b = make_stub_backbone(3, 6, 4).extract(t)
        assert np.array_equal(a, b)

    def test_projection_matches_independent_recipe(self):
        seed, dim, size = 7, 8, 4
        n = 3 * size * size
        m = np.array(reference_xorshift_signs(seed, dim * n)).reshape(dim, n)
        rng = np.random.default_rng(1)
        t = rng.normal(size=(3, size, size)).astype(np.float32)
        expected = (m @ t.reshape(-1).astype(np.float64)) / np.sqrt(n)
        got = make_stub_backbone(seed, dim, size).extract(t)
        assert np.allclose(got, expected, rtol=1e-5)

    def test_first_matrix_row_seed1(self):
        bb = StubBackbone(1, 2, 2)
        assert bb._matrix[0].tolist() == reference_xorshift_signs(1, 12)

    def test_linearity(self):
        bb = make_stub_backbone(2, 5, 4)
        rng = np.random.default_rng(2)
        t1 = rng.normal(size=(3, 4, 4)).astype(np.float32)
        t2 = rng.normal(size=(3, 4, 4)).astype(np.float32)
        combo = bb.extract(0.3 * t1 + 1.7 * t2)
        parts = 0.3 * bb.extract(t1) + 1.7 * bb.extract(t2)
        assert np.allclose(combo, parts, rtol=1e-5, atol=1e-6)

    def test_invocation_counter(self):
        bb = make_stub_backbone(1, 2, 4)
        t = np.zeros((3, 4, 4), dtype=np.float32)
        extract_features(bb, t, ViewKind.GLOBAL)
        extract_features(bb, t, ViewKind.LOCAL)
        assert bb.invocations == 2


class TestExtractFeatures:
    def test_determinism(self):
        bb = make_stub_backbone(4, 6, 4)
        rng = np.random.default_rng(3)
        t = rng.normal(size=(3, 4, 4)).astype(np.float32)
        a = extract_features(bb, t, ViewKind.GLOBAL)
        b = extract_features(bb, t, ViewKind.GLOBAL)
        assert np.array_equal(a.values, b.values)
        assert a.dim == 6

    def test_shape_mismatch(self):
        bb = make_stub_backbone(4, 6, 8)
        with pytest.raises(ShapeError):
            extract_features(bb, np.zeros((3, 4, 4), dtype=np.float32), ViewKind.GLOBAL)

    def test_nonfinite_rejected(self):
        class BadBackbone(StubBackbone):
            def extract(self, tensor):
                out = super().extract(tensor)
                out[0] = np.nan
                return out

        bb = BadBackbone(1, 4, 4)
        with pytest.raises(NumericsError):
            extract_features(bb, np.zeros((3, 4, 4), dtype=np.float32), ViewKind.GLOBAL)

    def test_feature_vector_invariants(self):
        with pytest.raises(ShapeError):
            FeatureVector(backbone_id="x", view=ViewKind.GLOBAL, values=np.zeros((2, 2)))
        with pytest.raises(NumericsError):
            FeatureVector(backbone_id="x", view=ViewKind.GLOBAL, values=np.array([np.inf]))

    def test_values_read_only(self):
        fv = FeatureVector(backbone_id="x", view=ViewKind.GLOBAL, values=np.ones(3))
        with pytest.raises(ValueError):
            fv.values[0] = 2.0


@pytest.fixture
def small_graph(tmp_path):
    rng = np.random.default_rng(10)
    w = rng.normal(size=(3 * 4 * 4, 5)).astype(np.float32)
    path = tmp_path / "small.onnx"
    write_image_feature_model(path, 4, w)
    return path, w


class TestOnnxBackbone:
    def test_load_and_extract(self, small_graph):
        path, w = small_graph
        desc = BackboneDescriptor(
            id="tiny", graph_path=str(path), feature_layer=FeatureLayer.GLOBAL_AVERAGE_POOL,
            feature_dim=5, input_size=4,
        )
        bb = load_backbone(desc)
        rng = np.random.default_rng(11)
        t = rng.normal(size=(3, 4, 4)).astype(np.float32)
        out = extract_features(bb, t, ViewKind.GLOBAL)
        assert np.allclose(out.values, t.reshape(-1) @ w, rtol=1e-5)

    def test_declared_dim_mismatch(self, small_graph):
        path, _ = small_graph
        desc = BackboneDescriptor(
            id="tiny", graph_path=str(path), feature_layer=FeatureLayer.GLOBAL_AVERAGE_POOL,
            feature_dim=999, input_size=4,
        )
        with pytest.raises(DescriptorMismatch):
            load_backbone(desc)

    def test_missing_file(self, tmp_path):
        desc = BackboneDescriptor(
            id="gone", graph_path=str(tmp_path / "none.onnx"),
            feature_layer=FeatureLayer.GLOBAL_AVERAGE_POOL, feature_dim=5, input_size=4,
        )
        with pytest.raises(IoError):
            load_backbone(desc)


class TestRegistry:
    def _entry(self, path, ident="tiny"):
        return {
            "id": ident,
            "graph_path": str(path),
            "feature_layer": "avgpool",
            "feature_dim": 5,
            "input_size": 4,
            "channel_means": [0.485, 0.456, 0.406],
            "channel_stds": [0.229, 0.224, 0.225],
        }

    def test_load_and_resolve(self, small_graph, tmp_path):
        path, _ = small_graph
        reg_path = tmp_path / "registry.json"
        reg_path.write_text(json.dumps([self._entry(path)]))
        registry = load_registry(reg_path)
        assert registry["tiny"].feature_dim == 5
        bb = resolve_backbone("tiny", registry)
        assert bb.feature_dim == 5

    def test_relative_graph_path(self, small_graph, tmp_path):
        path, _ = small_graph
        reg_path = tmp_path / "registry.json"
        reg_path.write_text(json.dumps([self._entry(path.name)]))
        registry = load_registry(reg_path)
        assert registry["tiny"].graph_path == str(path)

    def test_duplicate_id_rejected(self, small_graph, tmp_path):
        path, _ = small_graph
        reg_path = tmp_path / "registry.json"
        reg_path.write_text(json.dumps([self._entry(path), self._entry(path)]))
        with pytest.raises(DescriptorMismatch):
            load_registry(reg_path)

    def test_malformed_entry(self, tmp_path):
        reg_path = tmp_path / "registry.json"
        reg_path.write_text(json.dumps([{"id": "x"}]))
        with pytest.raises(DescriptorMismatch):
            load_registry(reg_path)

    def test_stub_ids(self):
        bb = resolve_backbone("stub:3", stub_dim=16, stub_input_size=8)
        assert (bb.seed, bb.feature_dim, bb.input_size) == (3, 16, 8)
        bb2 = resolve_backbone("stub:3:7", stub_input_size=8)
        assert bb2.feature_dim == 7

    def test_unknown_id(self):
        with pytest.raises(DescriptorMismatch):
            resolve_backbone("resnet50-imagenet", registry=None)

    def test_bad_stub_id(self):
        with pytest.raises(DescriptorMismatch):
            resolve_backbone("stub:notanumber")
