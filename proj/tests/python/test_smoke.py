import json
import math

import numpy as np
import pytest

nca_scope = pytest.importorskip("nca_scope")


def circle(n, radius=1.0):
    t = 2 * np.pi * np.arange(n) / n
    return np.column_stack([radius * np.cos(t), radius * np.sin(t)])


def test_version():
    assert nca_scope.__version__ == "0.3.0"


def test_circle_has_one_loop():
    diagram = nca_scope.rips_persistence(circle(60), max_dim=1)
    h0, h1, h2, threshold = nca_scope.betti(diagram)
    assert (h0, h1, h2) == (1, 1, 0)
    loops = diagram[diagram[:, 0] == 1]
    longest = loops[np.argmax(loops[:, 2] - loops[:, 1])]
    assert 1.70 <= longest[2] <= 1.76
    assert threshold > 0


def test_pca_reconstructs_planar_data():
    rng = np.random.default_rng(0)
    points = rng.normal(size=(40, 2)) @ rng.normal(size=(2, 10)) + rng.normal(size=10)
    basis = nca_scope.pca_fit(points, 2)
    assert basis.k == 2
    back = basis.reconstruct(basis.project(points))
    assert np.abs(back - points).max() < 1e-8
    gram = nca_scope.pca_fit(points, 2, method="gram")
    assert nca_scope.principal_angles(basis.components.T, gram.components.T).max() < 1e-6


def test_maxmin_and_coverage():
    idx = nca_scope.maxmin_subsample(circle(50), 10, seed=3)
    assert len(set(idx)) == 10
    assert nca_scope.ph_coverage(1000, 8000) == 0.125


def test_sparse_codes_are_nonnegative():
    rng = np.random.default_rng(1)
    codes, atoms, stats = nca_scope.sae_fit(rng.uniform(size=(300, 4)), expansion=2, epochs=5)
    assert codes.shape == (300, 8)
    assert codes.min() >= 0.0
    assert np.allclose(np.linalg.norm(atoms, axis=1), 1.0)
    assert 0.0 <= stats["dead_feature_fraction"] <= 1.0


def test_errors_map_to_python():
    with pytest.raises(ValueError):
        nca_scope.pca_fit(np.zeros((1, 3)), 1)
    with pytest.raises(ValueError):
        nca_scope.run_experiment(json.dumps({"schema_version": 1, "stages": [{"name": "x", "kind": "nope"}]}))


def test_recipes_are_listed():
    names = nca_scope.recipe_names()
    assert "cycle-detection" in names
    config = json.loads(nca_scope.recipe("fig8-texture-window", trajectory="t.ncat"))
    assert all(stage["kind"] != "train" for stage in config["stages"])


def test_empty_experiment(tmp_path):
    manifest = json.loads(nca_scope.run_experiment(json.dumps({"schema_version": 1, "output_dir": str(tmp_path), "stages": []})))
    assert manifest["stages"] == []
    assert (tmp_path / "manifest.json").exists()
    assert not math.isnan(manifest["rng_seed"])
