"""Command-line pipeline: synth -> split -> train-stage1 -> extract ->
train-stage2 -> eval / pca / predmap, plus the baseline arm and the sweep
harness.

Every command reads one JSON run config (--config), writes its outputs
under ``<outdir>/<stage>/``, and drops a manifest.json recording the config
hash and input-file hashes so downstream stages can detect stale or missing
prerequisites. Exit codes are per error class (see errors.py).
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import os
import sys
import time

import click
import numpy as np

from . import config as cfgmod
from . import evaluate as ev
from .augment import AugmentPolicy
from .data import (
    SplitSpec,
    load_dataset,
    read_patch_image,
    read_split_manifest,
    split_dataset,
    split_stats,
    write_split_manifest,
)
from .errors import MissingArtifact, PatchconError
from .losses import LossConfig
from .model import (
    build_classifier,
    build_encoder,
    build_projection,
    classify,
    encoder_manifest,
    load_checkpoint,
    predict_from_logits,
    save_checkpoint,
)
from .synthetic import generate_synthetic_dataset
from .train import (
    extract_frozen_features,
    fine_tune_baseline,
    read_feature_cache,
    train_stage1,
    train_stage2,
    write_feature_cache,
)

log = logging.getLogger("patchcon")


def _config_hash(cfg: cfgmod.RunConfig) -> str:
    blob = json.dumps(cfgmod.run_config_to_dict(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def _file_hash(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _stage_dir(cfg: cfgmod.RunConfig, stage: str) -> str:
    d = os.path.join(cfg.outdir, stage)
    os.makedirs(d, exist_ok=True)
    return d


def _write_manifest(stage_dir: str, cfg: cfgmod.RunConfig, inputs: list[str]) -> None:
    manifest = {
        "config_hash": _config_hash(cfg),
        "input_hashes": {p: _file_hash(p) for p in inputs},
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    with open(os.path.join(stage_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)


def _require(path: str, produced_by: str) -> str:
    if not os.path.exists(path):
        raise MissingArtifact(f"{path} not found; run `patchcon {produced_by}` first")
    return path


def _write_history(path: str, history: list[dict]) -> None:
    with open(path, "w") as f:
        for rec in history:
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def _load_config(config_path: str, seed: int | None, outdir: str | None) -> cfgmod.RunConfig:
    cfg = cfgmod.load_run_config(config_path)
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=seed)
    if outdir is not None:
        cfg = dataclasses.replace(cfg, outdir=outdir)
    os.makedirs(cfg.outdir, exist_ok=True)
    return cfg


def _load_split(cfg: cfgmod.RunConfig):
    path = _require(os.path.join(cfg.outdir, "data", "split.csv"), "split")
    return read_split_manifest(path)


def _images_and_labels(records):
    images = [read_patch_image(r.path) for r in records]
    labels = np.array([r.label for r in records], dtype=np.int64)
    return images, labels


def _encoder_cfg_dict(cfg: cfgmod.RunConfig) -> dict:
    return dataclasses.asdict(cfg.encoder)


common_options = [
    click.option("--config", "config_path", required=True,
                 type=click.Path(exists=True, dir_okay=False),
                 help="JSON run config."),
    click.option("--seed", type=int, default=None, help="Override config seed."),
    click.option("--outdir", type=click.Path(), default=None,
                 help="Override config output directory."),
]


def with_common(f):
    for opt in reversed(common_options):
        f = opt(f)
    return f


@click.group()
@click.option("-v", "--verbose", is_flag=True, default=False)
def main(verbose: bool) -> None:
    """Two-stage supervised-contrastive patch classification pipeline."""
    level = os.environ.get("PATCHCON_LOG", "DEBUG" if verbose else "INFO")
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _run(fn, *args):
    try:
        fn(*args)
    except PatchconError as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(e.exit_code)


@main.command()
@with_common
def synth(config_path, seed, outdir):
    """Generate the synthetic dataset declared in the config."""
    def go():
        cfg = _load_config(config_path, seed, outdir)
        if cfg.synthetic is None:
            raise MissingArtifact("config has no synthetic block")
        summary = generate_synthetic_dataset(cfg.synthetic, cfg.data_root)
        _write_manifest(_stage_dir(cfg, "data"), cfg, [])
        click.echo(f"wrote {summary['n_patches']} patches under {cfg.data_root}")

    _run(go)


@main.command()
@with_common
def split(config_path, seed, outdir):
    """Patient-level train/val/test split; writes data/split.csv."""
    def go():
        cfg = _load_config(config_path, seed, outdir)
        records, rejected = load_dataset(cfg.data_root)
        for path in rejected:
            log.warning("rejected (bad filename): %s", path)
        ds = split_dataset(records, cfg.split)
        data_dir = _stage_dir(cfg, "data")
        manifest_path = os.path.join(data_dir, "split.csv")
        write_split_manifest(ds, manifest_path)
        with open(os.path.join(data_dir, "stats.json"), "w") as f:
            json.dump(split_stats(ds), f, indent=2, sort_keys=True)
        _write_manifest(data_dir, cfg, [manifest_path])
        click.echo(f"split {len(records)} patches -> "
                   f"{len(ds.train)}/{len(ds.val)}/{len(ds.test)} "
                   f"(+{len(rejected)} rejected files)")

    _run(go)


@main.command("train-stage1")
@with_common
def cmd_train_stage1(config_path, seed, outdir):
    """Contrastive pre-training of encoder + projection head."""
    def go():
        cfg = _load_config(config_path, seed, outdir)
        ds = _load_split(cfg)
        images, labels = _images_and_labels(ds.train)
        encoder = build_encoder(cfg.encoder, cfg.seed)
        projector = build_projection(cfg.encoder.width, cfg.projection_dim, cfg.seed + 1)
        history = train_stage1(encoder, projector, images, labels,
                               cfg.train.stage1, cfg.loss, cfg.augment, cfg.seed)
        stage_dir = _stage_dir(cfg, "stage1")
        enc_path = os.path.join(stage_dir, "encoder.pt")
        save_checkpoint(encoder, enc_path, encoder_manifest(
            cfg.encoder, stage="stage1", epoch=len(history), seed=cfg.seed,
            history=[{k: v for k, v in h.items() if k != "wall_clock_s"}
                     for h in history]))
        save_checkpoint(projector, os.path.join(stage_dir, "projector.pt"), {
            "config": {"in_dim": cfg.encoder.width, "out_dim": cfg.projection_dim},
            "stage": "stage1", "epoch": len(history), "seed": cfg.seed,
        })
        _write_history(os.path.join(stage_dir, "history.jsonl"), history)
        _write_manifest(stage_dir, cfg, [enc_path])
        click.echo(f"stage 1 done: final mean loss {history[-1]['loss']:.4f}")

    _run(go)


@main.command()
@with_common
def extract(config_path, seed, outdir):
    """Frozen-feature extraction for all three splits."""
    def go():
        cfg = _load_config(config_path, seed, outdir)
        ds = _load_split(cfg)
        enc_path = _require(os.path.join(cfg.outdir, "stage1", "encoder.pt"),
                            "train-stage1")
        encoder = build_encoder(cfg.encoder, cfg.seed)
        load_checkpoint(encoder, enc_path, expected_config=_encoder_cfg_dict(cfg))
        feat_dir = _stage_dir(cfg, "features")
        written = []
        for name, recs in ds.as_dict().items():
            images, labels = _images_and_labels(recs)
            feats = extract_frozen_features(encoder, images)
            path = os.path.join(feat_dir, f"{name}.pcfc")
            write_feature_cache(path, feats, labels)
            written.append(path)
        _write_manifest(feat_dir, cfg, [enc_path] + written)
        click.echo(f"wrote feature caches: {', '.join(written)}")

    _run(go)


@main.command("train-stage2")
@with_common
def cmd_train_stage2(config_path, seed, outdir):
    """Linear classifier on frozen features with early stopping."""
    def go():
        cfg = _load_config(config_path, seed, outdir)
        feat_dir = os.path.join(cfg.outdir, "features")
        train_feats, train_labels = read_feature_cache(
            _require(os.path.join(feat_dir, "train.pcfc"), "extract"))
        val_feats, val_labels = read_feature_cache(
            _require(os.path.join(feat_dir, "val.pcfc"), "extract"))
        classifier = build_classifier(train_feats.shape[1], cfg.seed + 2)
        history, stop = train_stage2(classifier, train_feats, train_labels,
                                     val_feats, val_labels, cfg.train.stage2, cfg.seed)
        stage_dir = _stage_dir(cfg, "stage2")
        clf_path = os.path.join(stage_dir, "classifier.pt")
        save_checkpoint(classifier, clf_path, {
            "config": {"in_dim": int(train_feats.shape[1]), "n_classes": 2},
            "stage": "stage2", "epoch": stop.best_epoch, "seed": cfg.seed,
            "best_val_f1": stop.best_metric,
        })
        _write_history(os.path.join(stage_dir, "history.jsonl"), history)
        _write_manifest(stage_dir, cfg, [clf_path])
        click.echo(f"stage 2 done: best val F1 {stop.best_metric:.4f} "
                   f"at epoch {stop.best_epoch}")

    _run(go)


@main.command("train-baseline")
@with_common
def cmd_train_baseline(config_path, seed, outdir):
    """End-to-end cross-entropy baseline (no contrastive stage)."""
    def go():
        cfg = _load_config(config_path, seed, outdir)
        ds = _load_split(cfg)
        train_images, train_labels = _images_and_labels(ds.train)
        val_images, val_labels = _images_and_labels(ds.val)
        encoder = build_encoder(cfg.encoder, cfg.seed)
        classifier = build_classifier(cfg.encoder.width, cfg.seed + 2)
        history, stop = fine_tune_baseline(
            encoder, classifier, train_images, train_labels,
            val_images, val_labels, cfg.train.baseline, cfg.seed)
        stage_dir = _stage_dir(cfg, "baseline")
        save_checkpoint(encoder, os.path.join(stage_dir, "encoder.pt"),
                        encoder_manifest(cfg.encoder, stage="baseline",
                                         epoch=stop.best_epoch, seed=cfg.seed))
        save_checkpoint(classifier, os.path.join(stage_dir, "classifier.pt"), {
            "config": {"in_dim": cfg.encoder.width, "n_classes": 2},
            "stage": "baseline", "epoch": stop.best_epoch, "seed": cfg.seed,
            "best_val_f1": stop.best_metric,
        })
        _write_history(os.path.join(stage_dir, "history.jsonl"), history)
        _write_manifest(stage_dir, cfg, [])
        click.echo(f"baseline done: best val F1 {stop.best_metric:.4f}")

    _run(go)


def _test_predictions(cfg: cfgmod.RunConfig, ds):
    """Predictions of the stage-2 classifier on the test split."""
    feat_dir = os.path.join(cfg.outdir, "features")
    test_feats, test_labels = read_feature_cache(
        _require(os.path.join(feat_dir, "test.pcfc"), "extract"))
    classifier = build_classifier(test_feats.shape[1], cfg.seed + 2)
    load_checkpoint(classifier,
                    _require(os.path.join(cfg.outdir, "stage2", "classifier.pt"),
                             "train-stage2"))
    logits = classify(test_feats.astype(np.float64), classifier)
    return predict_from_logits(logits), test_labels


@main.command("eval")
@with_common
def cmd_eval(config_path, seed, outdir):
    """Test-set metrics of the stage-2 classifier."""
    def go():
        cfg = _load_config(config_path, seed, outdir)
        ds = _load_split(cfg)
        preds, truth = _test_predictions(cfg, ds)
        report = ev.compute_metrics(ev.confusion_matrix(preds, truth))
        eval_dir = _stage_dir(cfg, "eval")
        with open(os.path.join(eval_dir, "metrics.json"), "w") as f:
            json.dump(report.as_dict(), f, indent=2, sort_keys=True)
        _write_manifest(eval_dir, cfg, [])
        click.echo(json.dumps(report.as_dict(), sort_keys=True))

    _run(go)


@main.command()
@with_common
@click.option("--png/--no-png", default=False, help="Also render a scatter PNG.")
def pca(config_path, seed, outdir, png):
    """2-D PCA of the frozen train-set features."""
    def go():
        cfg = _load_config(config_path, seed, outdir)
        feat_dir = os.path.join(cfg.outdir, "features")
        feats, labels = read_feature_cache(
            _require(os.path.join(feat_dir, "train.pcfc"), "extract"))
        model = ev.pca_fit(feats.astype(np.float64), k=2)
        scores = ev.pca_transform(model, feats.astype(np.float64))
        eval_dir = _stage_dir(cfg, "eval")
        csv_path = os.path.join(eval_dir, "pca.csv")
        ev.export_pca_plot_data(scores, labels, csv_path)
        if png:
            import matplotlib

            matplotlib.use("Agg")
            import matplotlib.pyplot as plt

            fig, ax = plt.subplots(figsize=(6, 5))
            for lab, color, name in ((0, "purple", "benign"), (1, "gold", "malignant")):
                m = labels == lab
                ax.scatter(scores[m, 0], scores[m, 1], s=4, c=color, label=name)
            ax.set_xlabel("PC1")
            ax.set_ylabel("PC2")
            ax.legend()
            fig.savefig(os.path.join(eval_dir, "pca.png"), dpi=150)
            plt.close(fig)
        _write_manifest(eval_dir, cfg, [csv_path])
        click.echo(f"explained variance ratio: "
                   f"{model.explained_variance_ratio.round(4).tolist()}")

    _run(go)


@main.command()
@with_common
def predmap(config_path, seed, outdir):
    """Per-patient prediction-map rasters for the test split."""
    def go():
        cfg = _load_config(config_path, seed, outdir)
        ds = _load_split(cfg)
        preds, _ = _test_predictions(cfg, ds)
        maps_dir = _stage_dir(cfg, "maps")
        patch_size = cfg.synthetic.patch_size if cfg.synthetic else 50
        by_patient: dict[str, tuple[list, list]] = {}
        for rec, p in zip(ds.test, preds):
            by_patient.setdefault(rec.patient_id, ([], []))
            by_patient[rec.patient_id][0].append(rec)
            by_patient[rec.patient_id][1].append(int(p))
        written = []
        for pid, (recs, pp) in sorted(by_patient.items()):
            raster = ev.reconstruct_prediction_map(recs, np.array(pp), patch_size)
            path = os.path.join(maps_dir, f"{pid}_predmap.pgm")
            ev.write_pgm(path, raster)
            written.append(path)
        _write_manifest(maps_dir, cfg, written)
        click.echo(f"wrote {len(written)} prediction maps under {maps_dir}")

    _run(go)


SWEEP_AXES = ("temperature", "augmentation", "variant")


def _sweep_point_config(cfg: cfgmod.RunConfig, axis: str, value: str,
                        point_dir: str) -> cfgmod.RunConfig:
    if axis == "temperature":
        new = dataclasses.replace(cfg.loss, temperature=float(value))
        cfg = dataclasses.replace(cfg, loss=new)
    elif axis == "augmentation":
        cfg = dataclasses.replace(cfg, augment=AugmentPolicy(name=value))
    else:
        cfg = dataclasses.replace(cfg, loss=dataclasses.replace(cfg.loss, variant=value))
    return dataclasses.replace(cfg, outdir=point_dir)


def run_probe_pipeline(cfg: cfgmod.RunConfig) -> dict:
    """stage1 -> extract (train/val) -> stage2; returns validation metrics.

    Used by the sweep harness; assumes the dataset and split already exist
    at cfg.data_root.
    """
    ds = _load_split(cfg)
    t0 = time.perf_counter()
    images, labels = _images_and_labels(ds.train)
    encoder = build_encoder(cfg.encoder, cfg.seed)
    projector = build_projection(cfg.encoder.width, cfg.projection_dim, cfg.seed + 1)
    train_stage1(encoder, projector, images, labels,
                 cfg.train.stage1, cfg.loss, cfg.augment, cfg.seed)
    train_feats = extract_frozen_features(encoder, images)
    val_images, val_labels = _images_and_labels(ds.val)
    val_feats = extract_frozen_features(encoder, val_images)
    classifier = build_classifier(train_feats.shape[1], cfg.seed + 2)
    _, stop = train_stage2(classifier, train_feats, labels, val_feats, val_labels,
                           cfg.train.stage2, cfg.seed)
    return {
        "val_f1": stop.best_metric,
        "best_epoch": stop.best_epoch,
        "wall_clock_s": time.perf_counter() - t0,
    }


@main.command()
@with_common
@click.option("--axis", type=click.Choice(SWEEP_AXES), required=True)
@click.option("--values", required=True,
              help="Comma-separated sweep values for the chosen axis.")
def sweep(config_path, seed, outdir, axis, values):
    """Validation-F1 sweep along one axis; rows sorted best first."""
    def go():
        cfg = _load_config(config_path, seed, outdir)
        value_list = [v.strip() for v in values.split(",") if v.strip()]
        if not value_list:
            raise MissingArtifact("empty sweep value list")
        sweep_dir = _stage_dir(cfg, "sweep")
        rows = []
        for value in value_list:
            point_dir = os.path.join(sweep_dir, f"{axis}_{value}".replace("/", "_"))
            os.makedirs(point_dir, exist_ok=True)
            point_cfg = _sweep_point_config(cfg, axis, value, point_dir)
            try:
                # Points share the parent split: link the data dir inside.
                os.makedirs(os.path.join(point_dir, "data"), exist_ok=True)
                src = os.path.join(cfg.outdir, "data", "split.csv")
                dst = os.path.join(point_dir, "data", "split.csv")
                _require(src, "split")
                if not os.path.exists(dst):
                    import shutil

                    shutil.copyfile(src, dst)
                result = run_probe_pipeline(point_cfg)
                rows.append({"axis": axis, "value": value, **result, "error": None})
            except PatchconError as e:
                log.error("sweep point %s=%s failed: %s", axis, value, e)
                rows.append({"axis": axis, "value": value, "val_f1": None,
                             "best_epoch": None, "wall_clock_s": None,
                             "error": str(e)})
        ok = [r for r in rows if r["error"] is None]
        failed = [r for r in rows if r["error"] is not None]
        ok.sort(key=lambda r: r["val_f1"], reverse=True)
        for i, r in enumerate(ok):
            r["best"] = i == 0
        rows = ok + failed
        with open(os.path.join(sweep_dir, "sweep.json"), "w") as f:
            json.dump(rows, f, indent=2, sort_keys=True)
        with open(os.path.join(sweep_dir, "sweep.csv"), "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=["axis", "value", "val_f1",
                                              "best_epoch", "wall_clock_s",
                                              "best", "error"])
            w.writeheader()
            for r in rows:
                w.writerow({k: r.get(k) for k in w.fieldnames})
        _write_manifest(sweep_dir, cfg, [])
        click.echo(f"sweep finished: {len(ok)} ok, {len(failed)} failed; "
                   f"best {axis}={ok[0]['value']}" if ok else "sweep: all points failed")

    _run(go)


if __name__ == "__main__":
    main()
