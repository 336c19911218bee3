"""Shared domain types and small numeric utilities.

Images are plain numpy arrays of shape (H, W, 3) with float values in
[0, 1]; embeddings and projections are (n, d) float matrices. All helper
math here runs at float64.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeMismatch, ZeroRow

ZERO_ROW_TOL = 1e-12
UNIT_ROW_TOL = 1e-5


def validate_patch_image(img: np.ndarray) -> np.ndarray:
    """Check the (H, W, 3), values-in-[0,1] contract and return the array."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeMismatch(f"expected (H, W, 3) image, got shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ShapeMismatch(f"degenerate image shape {img.shape}")
    if not np.isfinite(img).all():
        raise ShapeMismatch("image contains non-finite values")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ShapeMismatch(
            f"pixel values outside [0, 1]: min={img.min()}, max={img.max()}"
        )
    return img


def normalize_rows(m: np.ndarray) -> np.ndarray:
    """Scale each row of `m` to unit Euclidean norm.

    Raises ZeroRow if any row has norm below 1e-12; a degenerate projection
    output must not be silently carried forward.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeMismatch(f"expected a 2-D matrix, got shape {m.shape}")
    norms = np.linalg.norm(m, axis=1)
    bad = np.flatnonzero(norms < ZERO_ROW_TOL)
    if bad.size:
        raise ZeroRow(f"row(s) {bad.tolist()} have norm < {ZERO_ROW_TOL}")
    return m / norms[:, None]


def pairwise_dot(z: np.ndarray) -> np.ndarray:
    """All pairwise dot products between rows: out[i, j] = z_i . z_j."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2:
        raise ShapeMismatch(f"expected a 2-D matrix, got shape {z.shape}")
    if not np.isfinite(z).all():
        raise ShapeMismatch("non-finite entries in input")
    return z @ z.T


def check_unit_rows(z: np.ndarray, tol: float = UNIT_ROW_TOL) -> None:
    """Assert every row of `z` has norm 1 within `tol`."""
    norms = np.linalg.norm(np.asarray(z, dtype=np.float64), axis=1)
    err = np.abs(norms - 1.0)
    if err.max(initial=0.0) > tol:
        worst = int(np.argmax(err))
        raise ShapeMismatch(
            f"row {worst} has norm {norms[worst]:.8f}, expected 1 +/- {tol}"
        )
