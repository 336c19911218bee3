import dataclasses
import json
import os

import numpy as np
import pytest
from click.testing import CliRunner

from patchcon.cli import main
from patchcon.config import (
    RunConfig,
    load_run_config,
    run_config_from_dict,
    run_config_to_dict,
    save_run_config,
)
from patchcon.data import SplitSpec
from patchcon.errors import ConfigError
from patchcon.evaluate import read_pgm
from patchcon.synthetic import SyntheticConfig


def tiny_config_dict(outdir, seed=0):
    """Desk-drawer scale: 4 patients, 3x3 grid of 16px patches."""
    return {
        "seed": seed,
        "outdir": outdir,
        "synthetic": {"n_patients": 4, "grid_w": 3, "grid_h": 3,
                      "patch_size": 16, "class_texture_separation": 0.9,
                      "seed": 0},
        "split": {"n_train_patients": 2, "n_val_patients": 1,
                  "n_test_patients": 1, "seed": 0},
        "encoder": {"input_size": 16, "vit_patch_size": 8, "depth": 1,
                    "width": 8, "heads": 2, "mlp_ratio": 2},
        "projection_dim": 4,
        "loss": {"temperature": 0.1},
        "train": {"stage1": {"epochs": 1, "batch_size": 4},
                  "stage2": {"epochs": 3},
                  "baseline": {"epochs": 1, "batch_size": 8, "lr": 1e-3}},
    }


class TestRunConfig:
    def test_round_trip(self, tmp_path):
        cfg = run_config_from_dict(tiny_config_dict(str(tmp_path / "out")))
        path = str(tmp_path / "cfg.json")
        save_run_config(cfg, path)
        assert load_run_config(path) == cfg

    def test_defaults_reproduce_training_recipe(self):
        cfg = RunConfig(dataset_root="/data")
        assert cfg.loss.temperature == 0.03
        assert cfg.train.stage1.lr == 5e-5
        assert cfg.train.stage1.epochs == 50
        assert cfg.train.stage1.batch_size == 32
        assert cfg.train.stage2.lr == 0.01
        assert cfg.train.stage2.patience == 5
        assert cfg.train.baseline.lr == 1e-5
        assert cfg.train.baseline.batch_size == 64
        assert cfg.encoder.input_size == 48
        assert cfg.encoder.vit_patch_size == 8
        assert cfg.encoder.depth == 4 and cfg.encoder.width == 64

    def test_unknown_field_names_its_path(self):
        data = tiny_config_dict("o")
        data["train"]["stage1"]["momentum"] = 0.9
        with pytest.raises(ConfigError) as e:
            run_config_from_dict(data)
        assert "train.stage1.momentum" in str(e.value)

    def test_negative_lr_names_its_path(self):
        data = tiny_config_dict("o")
        data["train"]["stage1"]["lr"] = -1.0
        with pytest.raises(ConfigError) as e:
            run_config_from_dict(data)
        assert "train.stage1.lr" in str(e.value)

    def test_needs_some_dataset(self):
        with pytest.raises(ConfigError):
            RunConfig(dataset_root=None, synthetic=None).validate()

    def test_data_root(self, tmp_path):
        assert RunConfig(dataset_root="/x").data_root == "/x"
        syn = RunConfig(outdir="run",
                        synthetic=SyntheticConfig(1, 1, 1))
        assert syn.data_root == os.path.join("run", "data")

    def test_to_dict_is_json_serializable(self):
        cfg = RunConfig(dataset_root="/x", split=SplitSpec(3, 1, 1, seed=2))
        json.dumps(run_config_to_dict(cfg))


@pytest.fixture
def cli_env(tmp_path):
    runner = CliRunner()
    cfg_path = str(tmp_path / "cfg.json")
    outdir = str(tmp_path / "run")
    with open(cfg_path, "w") as f:
        json.dump(tiny_config_dict(outdir), f)
    return runner, cfg_path, outdir


def invoke_ok(runner, args):
    result = runner.invoke(main, args, catch_exceptions=False)
    assert result.exit_code == 0, result.output
    return result


class TestCliPipeline:
    def test_end_to_end(self, cli_env):
        runner, cfg_path, outdir = cli_env
        base = ["--config", cfg_path]
        invoke_ok(runner, ["synth", *base])
        assert os.path.isdir(os.path.join(outdir, "data"))
        invoke_ok(runner, ["split", *base])
        assert os.path.exists(os.path.join(outdir, "data", "split.csv"))
        invoke_ok(runner, ["train-stage1", *base])
        for name in ("encoder.pt", "projector.pt", "history.jsonl", "manifest.json"):
            assert os.path.exists(os.path.join(outdir, "stage1", name))
        invoke_ok(runner, ["extract", *base])
        for split in ("train", "val", "test"):
            assert os.path.exists(os.path.join(outdir, "features", f"{split}.pcfc"))
        invoke_ok(runner, ["train-stage2", *base])
        result = invoke_ok(runner, ["eval", *base])
        with open(os.path.join(outdir, "eval", "metrics.json")) as f:
            metrics = json.load(f)
        for key in ("precision", "sensitivity", "specificity", "f1",
                    "balanced_accuracy"):
            assert 0.0 <= metrics[key] <= 1.0
        assert "f1" in result.output

        invoke_ok(runner, ["pca", *base])
        assert os.path.exists(os.path.join(outdir, "eval", "pca.csv"))

        invoke_ok(runner, ["predmap", *base])
        maps = sorted(os.listdir(os.path.join(outdir, "maps")))
        pgms = [m for m in maps if m.endswith(".pgm")]
        assert len(pgms) == 1  # one test patient
        raster = read_pgm(os.path.join(outdir, "maps", pgms[0]))
        assert raster.shape == (3 * 16, 3 * 16)
        assert set(np.unique(raster)) <= {60, 200, 255}

        invoke_ok(runner, ["train-baseline", *base])
        assert os.path.exists(os.path.join(outdir, "baseline", "classifier.pt"))

    def test_stage2_before_extract_exits_3(self, cli_env):
        runner, cfg_path, outdir = cli_env
        base = ["--config", cfg_path]
        invoke_ok(runner, ["synth", *base])
        invoke_ok(runner, ["split", *base])
        result = runner.invoke(main, ["train-stage2", *base])
        assert result.exit_code == 3
        assert "extract" in result.output

    def test_malformed_config_exits_2(self, tmp_path):
        runner = CliRunner()
        cfg_path = str(tmp_path / "bad.json")
        data = tiny_config_dict(str(tmp_path / "run"))
        data["loss"]["temperature"] = -1.0
        with open(cfg_path, "w") as f:
            json.dump(data, f)
        result = runner.invoke(main, ["synth", "--config", cfg_path])
        assert result.exit_code == 2

    def test_rerun_is_deterministic(self, cli_env, tmp_path):
        runner, cfg_path, _ = cli_env
        histories, blobs = [], []
        for name in ("a", "b"):
            outdir = str(tmp_path / name)
            base = ["--config", cfg_path, "--outdir", outdir]
            invoke_ok(runner, ["synth", *base])
            invoke_ok(runner, ["split", *base])
            invoke_ok(runner, ["train-stage1", *base])
            with open(os.path.join(outdir, "stage1", "history.jsonl")) as f:
                rows = [json.loads(line) for line in f]
            histories.append([{k: v for k, v in r.items() if k != "wall_clock_s"}
                              for r in rows])
            with open(os.path.join(outdir, "stage1", "encoder.pt"), "rb") as f:
                blobs.append(f.read())
        assert histories[0] == histories[1]
        assert blobs[0] == blobs[1]

    def test_seed_override_changes_weights(self, cli_env, tmp_path):
        runner, cfg_path, _ = cli_env
        blobs = []
        for name, seed in (("s0", "0"), ("s1", "1")):
            outdir = str(tmp_path / name)
            base = ["--config", cfg_path, "--outdir", outdir, "--seed", seed]
            invoke_ok(runner, ["synth", *base])
            invoke_ok(runner, ["split", *base])
            invoke_ok(runner, ["train-stage1", *base])
            with open(os.path.join(outdir, "stage1", "encoder.pt"), "rb") as f:
                blobs.append(f.read())
        assert blobs[0] != blobs[1]


class TestSweep:
    def prepared(self, cli_env):
        runner, cfg_path, outdir = cli_env
        base = ["--config", cfg_path]
        invoke_ok(runner, ["synth", *base])
        invoke_ok(runner, ["split", *base])
        return runner, base, outdir

    def test_single_point(self, cli_env):
        runner, base, outdir = self.prepared(cli_env)
        invoke_ok(runner, ["sweep", *base, "--axis", "temperature",
                           "--values", "0.1"])
        with open(os.path.join(outdir, "sweep", "sweep.json")) as f:
            rows = json.load(f)
        assert len(rows) == 1
        assert rows[0]["best"] is True
        assert rows[0]["error"] is None
        assert 0.0 <= rows[0]["val_f1"] <= 1.0

    def test_two_points_sorted_best_first(self, cli_env):
        runner, base, outdir = self.prepared(cli_env)
        invoke_ok(runner, ["sweep", *base, "--axis", "variant",
                           "--values", "as-printed,khosla-out"])
        with open(os.path.join(outdir, "sweep", "sweep.json")) as f:
            rows = json.load(f)
        assert len(rows) == 2
        f1s = [r["val_f1"] for r in rows]
        assert f1s == sorted(f1s, reverse=True)
        assert [r["best"] for r in rows] == [True, False]
        assert os.path.exists(os.path.join(outdir, "sweep", "sweep.csv"))
