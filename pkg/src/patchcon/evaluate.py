"""Metric suite, PCA embedding analysis, and prediction-map reconstruction."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .data import PatchRecord
from .errors import (
    EmptyMatrix,
    IoFailure,
    LengthMismatch,
    MixedPatients,
    OverlapError,
    ShapeMismatch,
)

# Grayscale rendering of prediction maps: darker = malignant.
BENIGN_GRAY = 200
MALIGNANT_GRAY = 60
BACKGROUND_GRAY = 255


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fn: int
    fp: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fn + self.fp + self.tn


@dataclass(frozen=True)
class MetricsReport:
    precision: float
    sensitivity: float
    specificity: float
    f1: float
    balanced_accuracy: float
    cm: ConfusionMatrix
    flags: tuple[str, ...] = ()

    def as_dict(self) -> dict:
        return {
            "precision": self.precision,
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "f1": self.f1,
            "balanced_accuracy": self.balanced_accuracy,
            "tp": self.cm.tp,
            "fn": self.cm.fn,
            "fp": self.cm.fp,
            "tn": self.cm.tn,
            "flags": list(self.flags),
        }


def confusion_matrix(preds, truth) -> ConfusionMatrix:
    """Binary confusion counts; positive class = malignant (1)."""
    preds = np.asarray(preds, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if preds.shape != truth.shape or preds.ndim != 1 or preds.size == 0:
        raise LengthMismatch(
            f"preds shape {preds.shape} vs truth shape {truth.shape}"
        )
    tp = int(np.sum((preds == 1) & (truth == 1)))
    fn = int(np.sum((preds == 0) & (truth == 1)))
    fp = int(np.sum((preds == 1) & (truth == 0)))
    tn = int(np.sum((preds == 0) & (truth == 0)))
    return ConfusionMatrix(tp=tp, fn=fn, fp=fp, tn=tn)


def _ratio(num: int, den: int, name: str, flags: list[str]) -> float:
    if den == 0:
        flags.append(f"{name}_undefined")
        return 0.0
    return num / den


def compute_metrics(cm: ConfusionMatrix) -> MetricsReport:
    """The five scalar metrics; 0/0 denominators yield 0 plus a flag."""
    if cm.total == 0:
        raise EmptyMatrix("confusion matrix has no samples")
    flags: list[str] = []
    precision = _ratio(cm.tp, cm.tp + cm.fp, "precision", flags)
    sensitivity = _ratio(cm.tp, cm.tp + cm.fn, "sensitivity", flags)
    specificity = _ratio(cm.tn, cm.tn + cm.fp, "specificity", flags)
    if precision + sensitivity > 0:
        f1 = 2 * precision * sensitivity / (precision + sensitivity)
    else:
        flags.append("f1_undefined")
        f1 = 0.0
    balanced = (sensitivity + specificity) / 2
    return MetricsReport(
        precision=precision,
        sensitivity=sensitivity,
        specificity=specificity,
        f1=f1,
        balanced_accuracy=balanced,
        cm=cm,
        flags=tuple(flags),
    )


def binary_f1(preds, truth) -> float:
    """Positive-class F1, the early-stopping / sweep selection metric."""
    return compute_metrics(confusion_matrix(preds, truth)).f1


# --- PCA ----------------------------------------------------------------

@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (k, d), orthonormal rows, variance-ordered
    explained_variance_ratio: np.ndarray
    flags: tuple[str, ...] = ()


def pca_fit(x: np.ndarray, k: int) -> PcaModel:
    """Principal axes of `x` via eigendecomposition of the covariance.

    Sign convention: the largest-magnitude entry of each component is made
    positive, so repeated fits are bit-for-bit reproducible. If k exceeds
    the numerical rank the extra axes are still returned (they span the
    null space, ratio 0) and a ``rank_deficient`` flag is set.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ShapeMismatch(f"need an (n >= 2, d) matrix, got {x.shape}")
    n, d = x.shape
    if not 1 <= k <= min(n - 1, d):
        raise ShapeMismatch(f"k={k} outside [1, min(n-1, d)={min(n - 1, d)}]")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = (xc.T @ xc) / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    comps = evecs[:, order].T[:k].copy()
    for row in comps:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1
    total = evals.sum()
    ratios = evals[:k] / total if total > 0 else np.zeros(k)
    flags: tuple[str, ...] = ()
    rank = int(np.sum(evals > max(evals[0], 1.0) * 1e-12)) if total > 0 else 0
    if k > rank:
        flags = ("rank_deficient",)
    return PcaModel(mean=mean, components=comps,
                    explained_variance_ratio=ratios, flags=flags)


def pca_transform(model: PcaModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.mean.shape[0]:
        raise ShapeMismatch(f"expected (n, {model.mean.shape[0]}), got {x.shape}")
    return (x - model.mean) @ model.components.T


def export_pca_plot_data(scores: np.ndarray, labels, path: str) -> None:
    """Write ``pc1,pc2,label`` CSV of the first two score columns."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.ndim != 2 or scores.shape[1] < 2:
        raise ShapeMismatch(f"need >= 2 score columns, got shape {scores.shape}")
    if scores.shape[0] != labels.shape[0]:
        raise LengthMismatch("scores and labels differ in length")
    try:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["pc1", "pc2", "label"])
            for (p1, p2), lab in zip(scores[:, :2], labels):
                w.writerow([f"{p1:.10g}", f"{p2:.10g}", int(lab)])
    except OSError as e:
        raise IoFailure(f"cannot write PCA export {path}: {e}") from e


# --- prediction maps -----------------------------------------------------

def reconstruct_prediction_map(
    records: list[PatchRecord], preds, patch_size: int
) -> np.ndarray:
    """Place per-patch predictions back onto the slide canvas.

    Returns a uint8 grayscale raster of shape
    (max_y + patch_size, max_x + patch_size): benign regions 200, malignant
    60, uncovered background 255.
    """
    preds = np.asarray(preds, dtype=np.int64)
    if len(records) == 0 or preds.shape != (len(records),):
        raise LengthMismatch(
            f"{len(records)} records vs {preds.shape} predictions"
        )
    patients = {r.patient_id for r in records}
    if len(patients) != 1:
        raise MixedPatients(f"records span patients {sorted(patients)}")
    height = max(r.y for r in records) + patch_size
    width = max(r.x for r in records) + patch_size
    raster = np.full((height, width), BACKGROUND_GRAY, dtype=np.uint8)
    covered = np.zeros((height, width), dtype=bool)
    for r, p in zip(records, preds):
        ys, xs = slice(r.y, r.y + patch_size), slice(r.x, r.x + patch_size)
        if covered[ys, xs].any():
            raise OverlapError(f"patch at ({r.x}, {r.y}) overlaps an earlier patch")
        covered[ys, xs] = True
        raster[ys, xs] = MALIGNANT_GRAY if p == 1 else BENIGN_GRAY
    return raster


def write_pgm(path: str, raster: np.ndarray) -> None:
    """Binary (P5) 8-bit grayscale PGM."""
    raster = np.asarray(raster, dtype=np.uint8)
    if raster.ndim != 2:
        raise ShapeMismatch(f"PGM needs a 2-D raster, got shape {raster.shape}")
    try:
        with open(path, "wb") as f:
            f.write(f"P5\n{raster.shape[1]} {raster.shape[0]}\n255\n".encode())
            f.write(raster.tobytes())
    except OSError as e:
        raise IoFailure(f"cannot write PGM {path}: {e}") from e


def read_pgm(path: str) -> np.ndarray:
    if not os.path.isfile(path):
        raise IoFailure(f"PGM not found: {path}")
    with open(path, "rb") as f:
        blob = f.read()
    parts = blob.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P5" or parts[2] != b"255":
        raise IoFailure(f"unsupported PGM header in {path}")
    w, h = (int(v) for v in parts[1].split())
    data = np.frombuffer(parts[3][: w * h], dtype=np.uint8)
    if data.size != w * h:
        raise IoFailure(f"truncated PGM payload in {path}")
    return data.reshape(h, w).copy()
