import os

import numpy as np
import pytest

from patchcon.data import load_dataset, read_patch_image
from patchcon.evaluate import BENIGN_GRAY, MALIGNANT_GRAY, read_pgm
from patchcon.synthetic import SyntheticConfig, generate_synthetic_dataset


def file_bytes(root):
    out = {}
    for dirpath, _, files in os.walk(root):
        for f in sorted(files):
            with open(os.path.join(dirpath, f), "rb") as fh:
                out[os.path.relpath(os.path.join(dirpath, f), root)] = fh.read()
    return out


class TestGenerator:
    def test_grid_coordinates(self, tmp_path):
        cfg = SyntheticConfig(n_patients=1, grid_w=2, grid_h=2, patch_size=50,
                              class_texture_separation=0.5, seed=3)
        summary = generate_synthetic_dataset(cfg, str(tmp_path / "d"))
        assert summary["n_patches"] == 4
        records, _ = load_dataset(str(tmp_path / "d"))
        assert {(r.x, r.y) for r in records} == {(0, 0), (0, 50), (50, 0), (50, 50)}

    def test_deterministic_bytes(self, tmp_path):
        cfg = SyntheticConfig(n_patients=2, grid_w=3, grid_h=2, patch_size=16,
                              class_texture_separation=0.7, seed=11)
        generate_synthetic_dataset(cfg, str(tmp_path / "a"))
        generate_synthetic_dataset(cfg, str(tmp_path / "b"))
        assert file_bytes(tmp_path / "a") == file_bytes(tmp_path / "b")

    def test_truth_grid_values_match_patches(self, tmp_path):
        cfg = SyntheticConfig(n_patients=1, grid_w=4, grid_h=3, patch_size=16,
                              class_texture_separation=0.5, seed=5)
        summary = generate_synthetic_dataset(cfg, str(tmp_path / "d"))
        grid = read_pgm(summary["truth_grids"]["synth000"])
        assert grid.shape == (3, 4)
        assert set(np.unique(grid)) <= {BENIGN_GRAY, MALIGNANT_GRAY}
        records, _ = load_dataset(str(tmp_path / "d"))
        for r in records:
            expect = MALIGNANT_GRAY if r.label == 1 else BENIGN_GRAY
            assert grid[r.y // 16, r.x // 16] == expect

    def test_pixels_in_range(self, tmp_path):
        cfg = SyntheticConfig(n_patients=1, grid_w=2, grid_h=2, patch_size=16,
                              class_texture_separation=0.9, seed=2)
        generate_synthetic_dataset(cfg, str(tmp_path / "d"))
        records, _ = load_dataset(str(tmp_path / "d"))
        for r in records:
            img = read_patch_image(r.path)
            assert img.min() >= 0.0 and img.max() <= 1.0

    def test_full_separation_threshold_oracle(self, tmp_path):
        # At separation 1.0 a brute-force search over mean-intensity
        # thresholds must classify >= 99% of patches.
        cfg = SyntheticConfig(n_patients=2, grid_w=6, grid_h=6, patch_size=50,
                              class_texture_separation=1.0, seed=9)
        generate_synthetic_dataset(cfg, str(tmp_path / "d"))
        records, _ = load_dataset(str(tmp_path / "d"))
        means = np.array([read_patch_image(r.path).mean() for r in records])
        labels = np.array([r.label for r in records])
        best = 0.0
        for thr in np.linspace(means.min(), means.max(), 500):
            below = means < thr
            best = max(best, (below == labels).mean(), (~below == labels).mean())
        assert best >= 0.99

    @pytest.mark.parametrize("kwargs", [
        {"n_patients": 0}, {"grid_w": 0}, {"patch_size": 0},
        {"class_texture_separation": 0.0},
        {"class_texture_separation": 1.5},
    ])
    def test_invalid_config(self, kwargs):
        base = dict(n_patients=1, grid_w=2, grid_h=2, patch_size=16,
                    class_texture_separation=0.5, seed=0)
        base.update(kwargs)
        with pytest.raises(ValueError):
            SyntheticConfig(**base).validate()
