import numpy as np
import pytest

from patchcon.model import EncoderConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_encoder_cfg():
    """Smallest useful ViT: 16x16 input, 2x2 token grid."""
    return EncoderConfig(input_size=16, vit_patch_size=8, depth=1, width=8,
                         heads=2, mlp_ratio=2)


def random_unit_rows(rng, n, d):
    z = rng.standard_normal((n, d))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def random_images(rng, n, size=16):
    return [rng.random((size, size, 3)) for _ in range(n)]
