"""Stochastic two-view augmentation for contrastive pre-training.

RNG discipline: every draw comes from an explicit numpy Generator, and
``two_view`` consumes draws in a fixed order (all of view A's before all
of view B's), so a seeded run is exactly reproducible and parallel workers
can derive per-worker streams from the master seed via ``spawn_rng``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import validate_patch_image
from .errors import ConfigError

POLICY_NAMES = ("flips", "flips+color")


@dataclass(frozen=True)
class AugmentPolicy:
    name: str = "flips"
    flip_prob: float = 0.5
    grayscale_prob: float = 0.2
    brightness: float = 0.2   # multiplicative jitter range +/- brightness
    contrast: float = 0.2

    def validate(self) -> None:
        if self.name not in POLICY_NAMES:
            raise ConfigError(
                "augment.name", f"unknown policy {self.name!r}; one of {POLICY_NAMES}"
            )
        for fld in ("flip_prob", "grayscale_prob"):
            v = getattr(self, fld)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"augment.{fld}", f"probability {v} outside [0, 1]")


def hflip(img: np.ndarray) -> np.ndarray:
    """Mirror along the vertical axis (reverse columns)."""
    return validate_patch_image(img)[:, ::-1, :].copy()


def vflip(img: np.ndarray) -> np.ndarray:
    """Mirror along the horizontal axis (reverse rows)."""
    return validate_patch_image(img)[::-1, :, :].copy()


def _to_grayscale(img: np.ndarray) -> np.ndarray:
    luma = img @ np.array([0.299, 0.587, 0.114])
    return np.repeat(luma[:, :, None], 3, axis=2)


def _one_view(img: np.ndarray, policy: AugmentPolicy,
              rng: np.random.Generator) -> np.ndarray:
    # Draw order per view: vflip, hflip, then (grayscale, brightness,
    # contrast) for the color policy. Color draws are consumed even when an
    # op does not fire, keeping the stream alignment independent of outcomes.
    out = img
    if rng.random() < policy.flip_prob:
        out = vflip(out)
    if rng.random() < policy.flip_prob:
        out = hflip(out)
    if policy.name == "flips+color":
        gray_draw = rng.random()
        b = rng.uniform(1.0 - policy.brightness, 1.0 + policy.brightness)
        c = rng.uniform(1.0 - policy.contrast, 1.0 + policy.contrast)
        if gray_draw < policy.grayscale_prob:
            out = _to_grayscale(out)
        out = out * b
        out = (out - out.mean()) * c + out.mean()
        out = np.clip(out, 0.0, 1.0)
    return out


def two_view(
    img: np.ndarray, policy: AugmentPolicy, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Two independent stochastic views of one patch (view A drawn first)."""
    policy.validate()
    img = validate_patch_image(img)
    return _one_view(img, policy, rng), _one_view(img, policy, rng)


def spawn_rng(master_seed: int, stream: int) -> np.random.Generator:
    """Derived per-worker stream: documented split rule for parallel use."""
    return np.random.default_rng(np.random.SeedSequence(master_seed).spawn(stream + 1)[stream])
