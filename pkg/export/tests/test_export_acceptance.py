"""Acceptance gate for the export package.

One line per backbone: every exported graph must reproduce the source
network's features (cosine >= 0.999 on three probe images) and declare the
dimensionality the graph actually emits (2048 for average-pool features,
4096 for first-FC features).
"""

from contextlib import contextmanager

import pytest

from aescomp_export import verify_export

from exportcases import EXPORT_SPECS


@contextmanager
def criterion(name):
    try:
        yield
    except BaseException:
        print(f"FAIL {name}")
        raise
    print(f"PASS {name}")


@pytest.mark.parametrize("model_id", sorted(EXPORT_SPECS))
def test_export_parity(exported, probe_paths, model_id):
    _, expected_dim = EXPORT_SPECS[model_id]
    with criterion(f"export parity: {model_id}"):
        result = exported[model_id]
        assert result.descriptor["feature_dim"] == expected_dim
        report = verify_export(result.graph_path, result.descriptor, probe_paths, result.module)
        assert report.observed_dim == expected_dim
        assert len(report.cosines) == 3
        assert all(c >= 0.999 for c in report.cosines)
        assert report.passed
