"""Dataset ingestion, patient-level splitting, and class statistics.

Patch files follow the coordinate grammar
``<patient>_x<uint>_y<uint>_class<0|1>.<ext>``; the patient id may itself
contain underscores, so the rightmost ``_x..._y..._class...`` match wins.
"""

from __future__ import annotations

import csv
import os
import re
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import (
    DuplicateCoordinate,
    EmptyDataset,
    IoFailure,
    MalformedName,
    PatientCountMismatch,
)

_NAME_RE = re.compile(
    r"^(?P<pid>.+)_x(?P<x>\d+)_y(?P<y>\d+)_class(?P<c>[01])\.(?P<ext>[A-Za-z]+)$"
)

IMAGE_EXTENSIONS = {"png", "jpg", "jpeg", "bmp", "tif", "tiff"}


@dataclass(frozen=True)
class PatchRecord:
    patient_id: str
    x: int
    y: int
    label: int
    path: str

    def sort_key(self):
        return (self.patient_id, self.x, self.y)


@dataclass(frozen=True)
class SplitSpec:
    n_train_patients: int
    n_val_patients: int
    n_test_patients: int
    seed: int = 0


@dataclass(frozen=True)
class DatasetSplit:
    train: list[PatchRecord]
    val: list[PatchRecord]
    test: list[PatchRecord]

    def as_dict(self) -> dict[str, list[PatchRecord]]:
        return {"train": self.train, "val": self.val, "test": self.test}


def parse_patch_filename(name: str) -> tuple[str, int, int, int]:
    """Parse ``<patient>_x<uint>_y<uint>_class<0|1>.<ext>`` into its fields."""
    m = _NAME_RE.match(name)
    if m is None:
        raise MalformedName(f"filename does not match patch grammar: {name!r}")
    return m.group("pid"), int(m.group("x")), int(m.group("y")), int(m.group("c"))


def load_dataset(root: str) -> tuple[list[PatchRecord], list[str]]:
    """Scan `root` recursively for patch files.

    Returns (records sorted by (patient_id, x, y), rejected file paths).
    Rejections are image files whose names fail the grammar; they are
    reported to the caller, never silently dropped.
    """
    if not os.path.isdir(root):
        raise IoFailure(f"dataset root does not exist: {root}")
    records: list[PatchRecord] = []
    rejected: list[str] = []
    seen: dict[tuple[str, int, int], str] = {}
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames.sort()
        for fname in sorted(filenames):
            ext = fname.rsplit(".", 1)[-1].lower()
            if ext not in IMAGE_EXTENSIONS:
                continue
            path = os.path.join(dirpath, fname)
            try:
                pid, x, y, label = parse_patch_filename(fname)
            except MalformedName:
                rejected.append(path)
                continue
            key = (pid, x, y)
            if key in seen:
                raise DuplicateCoordinate(
                    f"patches {seen[key]} and {path} share (patient, x, y) = {key}"
                )
            seen[key] = path
            records.append(PatchRecord(pid, x, y, label, path))
    if not records:
        raise EmptyDataset(f"no valid patch files under {root}")
    records.sort(key=PatchRecord.sort_key)
    return records, rejected


def read_patch_image(path: str) -> np.ndarray:
    """Load a patch as a float64 (H, W, 3) array scaled from 8-bit to [0, 1]."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except OSError as e:
        raise IoFailure(f"cannot read image {path}: {e}") from e
    return arr / 255.0


def split_dataset(records: list[PatchRecord], spec: SplitSpec) -> DatasetSplit:
    """Patient-level split.

    The distinct patient ids are sorted, shuffled by
    ``numpy.random.default_rng(spec.seed).permutation``, and assigned in
    order train -> val -> test. All patches of a patient follow the patient,
    so no patient ever spans two splits.
    """
    patients = sorted({r.patient_id for r in records})
    want = spec.n_train_patients + spec.n_val_patients + spec.n_test_patients
    if len(patients) != want:
        raise PatientCountMismatch(
            f"dataset has {len(patients)} patients, split spec sums to {want}"
        )
    order = np.random.default_rng(spec.seed).permutation(len(patients))
    shuffled = [patients[i] for i in order]
    train_ids = set(shuffled[: spec.n_train_patients])
    val_ids = set(
        shuffled[spec.n_train_patients : spec.n_train_patients + spec.n_val_patients]
    )
    by_split: dict[str, list[PatchRecord]] = {"train": [], "val": [], "test": []}
    for r in records:
        if r.patient_id in train_ids:
            by_split["train"].append(r)
        elif r.patient_id in val_ids:
            by_split["val"].append(r)
        else:
            by_split["test"].append(r)
    return DatasetSplit(**by_split)


def dataset_stats(records: list[PatchRecord]) -> dict:
    """Per-class patch counts and fractions for one list of records."""
    n = len(records)
    benign = sum(1 for r in records if r.label == 0)
    malignant = n - benign
    return {
        "total": n,
        "benign": benign,
        "malignant": malignant,
        "benign_fraction": benign / n if n else 0.0,
        "malignant_fraction": malignant / n if n else 0.0,
    }


def split_stats(split: DatasetSplit) -> dict[str, dict]:
    return {name: dataset_stats(recs) for name, recs in split.as_dict().items()}


MANIFEST_HEADER = ["path", "patient_id", "x", "y", "label", "split"]


def write_split_manifest(split: DatasetSplit, path: str) -> None:
    """CSV manifest with header ``path,patient_id,x,y,label,split``."""
    try:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(MANIFEST_HEADER)
            for name, recs in split.as_dict().items():
                for r in recs:
                    w.writerow([r.path, r.patient_id, r.x, r.y, r.label, name])
    except OSError as e:
        raise IoFailure(f"cannot write split manifest {path}: {e}") from e


def read_split_manifest(path: str) -> DatasetSplit:
    if not os.path.isfile(path):
        raise IoFailure(f"split manifest not found: {path}")
    by_split: dict[str, list[PatchRecord]] = {"train": [], "val": [], "test": []}
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != MANIFEST_HEADER:
            raise IoFailure(f"unexpected manifest header in {path}: {reader.fieldnames}")
        for row in reader:
            if row["split"] not in by_split:
                raise IoFailure(f"unknown split name {row['split']!r} in {path}")
            by_split[row["split"]].append(
                PatchRecord(
                    row["patient_id"], int(row["x"]), int(row["y"]),
                    int(row["label"]), row["path"],
                )
            )
    return DatasetSplit(**by_split)
