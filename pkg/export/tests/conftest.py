import numpy as np
import pytest
from PIL import Image

from aescomp_export import ExportSpec, export_backbone
from exportcases import EXPORT_SPECS


@pytest.fixture(scope="session")
def export_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("graphs")


@pytest.fixture(scope="session")
def exported(export_dir):
    results = {}
    for model_id, (layer, _) in EXPORT_SPECS.items():
        spec = ExportSpec(model_id=model_id, feature_layer=layer, output_dir=str(export_dir))
        results[model_id] = export_backbone(spec)
    return results


@pytest.fixture(scope="session")
def probe_paths(tmp_path_factory):
    root = tmp_path_factory.mktemp("probes")
    rng = np.random.default_rng(2026)
    paths = []
    for i in range(3):
        px = rng.integers(0, 256, size=(180, 240, 3), dtype=np.uint8)
        path = root / f"probe_{i}.png"
        Image.fromarray(px).save(path)
        paths.append(str(path))
    return paths
