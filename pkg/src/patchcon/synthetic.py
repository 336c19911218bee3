"""Desk-scale synthetic patch dataset generator.

Stands in for the real histopathology corpus: per patient, a rectangular
grid of 50x50 stain-colored patches whose class-dependent texture
(intensity shift plus dark nuclei-like blobs) is tunable via
``class_texture_separation``. Per-patch brightness jitter shrinks as the
separation grows, so at separation 1.0 a plain mean-intensity threshold
separates the classes almost perfectly.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from .errors import IoFailure
from .evaluate import BENIGN_GRAY, MALIGNANT_GRAY, write_pgm

# Base stain color (RGB) the patches are textured around.
_BASE_COLOR = np.array([0.82, 0.64, 0.74])
_PIXEL_NOISE_STD = 0.05
_CLASS_SHIFT = 0.30       # malignant mean-intensity drop at separation 1.0
_JITTER_STD = 0.60        # per-patch brightness jitter at separation 0.0
_BLOB_DEPTH = 0.35
_BLUR_SIGMA = 6.0         # benign blobs are diffused to the same total mass


@dataclass(frozen=True)
class SyntheticConfig:
    n_patients: int
    grid_w: int
    grid_h: int
    patch_size: int = 50
    class_texture_separation: float = 0.8
    seed: int = 0

    def validate(self) -> None:
        if min(self.n_patients, self.grid_w, self.grid_h, self.patch_size) < 1:
            raise ValueError("all synthetic dimensions must be >= 1")
        if not 0.0 < self.class_texture_separation <= 1.0:
            raise ValueError("class_texture_separation must be in (0, 1]")


def _label_grid(cfg: SyntheticConfig, rng: np.random.Generator) -> np.ndarray:
    """Spatially correlated binary field, roughly class-balanced."""
    field = rng.standard_normal((cfg.grid_h, cfg.grid_w))
    smooth = gaussian_filter(field, sigma=max(1.0, min(cfg.grid_h, cfg.grid_w) / 6))
    return (smooth > np.median(smooth)).astype(np.uint8)


def _stamp_blobs(img: np.ndarray, n: int, depth: float,
                 rng: np.random.Generator) -> None:
    """Darken `n` elliptical nuclei-like regions in place."""
    size = img.shape[0]
    yy, xx = np.mgrid[0:size, 0:size]
    for _ in range(n):
        cy, cx = rng.uniform(0, size, size=2)
        ry, rx = rng.uniform(2.0, 5.0, size=2)
        mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        img[mask] -= depth


def _render_patch(label: int, cfg: SyntheticConfig,
                  rng: np.random.Generator) -> np.ndarray:
    """One patch, built from three class cues.

    Mean cue: malignant patches are darker by _CLASS_SHIFT * separation,
    masked by a shared per-patch brightness jitter that vanishes as the
    separation approaches 1 (so at separation 1.0 a plain mean threshold
    is near-perfect). Texture cue: both classes carry the same darkened
    blob mass, but malignant keeps it as sharp nuclei-like blobs while
    benign diffuses it, leaving texture frequency as the jitter-proof
    signal a trained encoder can pick up.
    """
    sep = cfg.class_texture_separation
    size = cfg.patch_size
    img = np.tile(_BASE_COLOR, (size, size, 1))
    img += rng.normal(0.0, _PIXEL_NOISE_STD, size=img.shape)
    texture = np.zeros((size, size))
    _stamp_blobs(texture, 2 + int(round(10 * sep)), _BLOB_DEPTH, rng)
    if label == 1:
        texture -= _CLASS_SHIFT * sep
    else:
        # wrap mode preserves the blob mass, so the classes share the same
        # expected blob contribution to the patch mean
        texture = gaussian_filter(texture, sigma=_BLUR_SIGMA, mode="wrap")
    img += texture[:, :, None]
    img += rng.normal(0.0, _JITTER_STD * (1.0 - sep))  # shared brightness jitter
    return np.clip(img, 0.0, 1.0)


def generate_synthetic_dataset(cfg: SyntheticConfig, root: str) -> dict:
    """Write the dataset under `root`; truth grids go to ``root/truth/``.

    Deterministic in cfg.seed: the RNG is consumed patient by patient, and
    within a patient row-major over the grid. Returns a summary with the
    written patch count and per-patient truth-grid paths.
    """
    cfg.validate()
    truth_dir = os.path.join(root, "truth")
    try:
        os.makedirs(root, exist_ok=True)
        os.makedirs(truth_dir, exist_ok=True)
    except OSError as e:
        raise IoFailure(f"cannot create dataset root {root}: {e}") from e
    rng = np.random.default_rng(cfg.seed)
    truth_paths: dict[str, str] = {}
    n_patches = 0
    for p in range(cfg.n_patients):
        pid = f"synth{p:03d}"
        grid = _label_grid(cfg, rng)
        for gy in range(cfg.grid_h):
            for gx in range(cfg.grid_w):
                label = int(grid[gy, gx])
                img = _render_patch(label, cfg, rng)
                x, y = gx * cfg.patch_size, gy * cfg.patch_size
                name = f"{pid}_x{x}_y{y}_class{label}.png"
                pixels = np.round(img * 255.0).astype(np.uint8)
                try:
                    Image.fromarray(pixels, mode="RGB").save(
                        os.path.join(root, name)
                    )
                except OSError as e:
                    raise IoFailure(f"cannot write patch {name}: {e}") from e
                n_patches += 1
        gray = np.where(grid == 1, MALIGNANT_GRAY, BENIGN_GRAY).astype(np.uint8)
        truth_path = os.path.join(truth_dir, f"{pid}_truth.pgm")
        write_pgm(truth_path, gray)
        truth_paths[pid] = truth_path
    return {"root": root, "n_patches": n_patches, "truth_grids": truth_paths}
