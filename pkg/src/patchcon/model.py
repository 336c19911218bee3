"""Encoders (toy ViT plus an adapter seam for external pretrained ones),
projection head, linear classifier, and checkpoint I/O."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .core import normalize_rows
from .errors import ConfigError, IoFailure, ManifestMismatch, ShapeMismatch


@dataclass(frozen=True)
class EncoderConfig:
    input_size: int = 48
    vit_patch_size: int = 8
    depth: int = 4
    width: int = 64
    heads: int = 4
    mlp_ratio: int = 4

    def validate(self) -> None:
        if self.input_size % self.vit_patch_size != 0:
            raise ConfigError(
                "encoder.vit_patch_size",
                f"{self.vit_patch_size} does not divide input_size {self.input_size}",
            )
        if self.width % self.heads != 0:
            raise ConfigError(
                "encoder.heads", f"width {self.width} not divisible by {self.heads}"
            )

    @property
    def n_tokens(self) -> int:
        # grid tokens + class token
        return (self.input_size // self.vit_patch_size) ** 2 + 1


# ViT-Base geometry for external pretrained encoders loaded via the adapter.
PRETRAINED_ENCODER_CONFIG = EncoderConfig(
    input_size=224, vit_patch_size=16, depth=12, width=768, heads=12
)


class SelfAttention(nn.Module):
    def __init__(self, width: int, heads: int):
        super().__init__()
        self.heads = heads
        self.head_dim = width // heads
        self.qkv = nn.Linear(width, 3 * width)
        self.out = nn.Linear(width, width)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, t, c = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        q = q.view(b, t, self.heads, self.head_dim).transpose(1, 2)
        k = k.view(b, t, self.heads, self.head_dim).transpose(1, 2)
        v = v.view(b, t, self.heads, self.head_dim).transpose(1, 2)
        attn = (q @ k.transpose(-2, -1)) * self.head_dim**-0.5
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, t, c)
        return self.out(out)


class Block(nn.Module):
    """Pre-LN transformer block."""

    def __init__(self, width: int, heads: int, mlp_ratio: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(width)
        self.attn = SelfAttention(width, heads)
        self.ln2 = nn.LayerNorm(width)
        self.mlp = nn.Sequential(
            nn.Linear(width, mlp_ratio * width),
            nn.GELU(),
            nn.Linear(mlp_ratio * width, width),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.ln1(x))
        x = x + self.mlp(self.ln2(x))
        return x


class ToyViT(nn.Module):
    """Small from-scratch ViT; representation r = class-token readout."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        ps = cfg.vit_patch_size
        self.patch_embed = nn.Linear(3 * ps * ps, cfg.width)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, cfg.width))
        self.pos_embed = nn.Parameter(torch.zeros(1, cfg.n_tokens, cfg.width))
        nn.init.normal_(self.cls_token, std=0.02)
        nn.init.normal_(self.pos_embed, std=0.02)
        self.blocks = nn.ModuleList(
            Block(cfg.width, cfg.heads, cfg.mlp_ratio) for _ in range(cfg.depth)
        )
        self.norm = nn.LayerNorm(cfg.width)

    @property
    def width(self) -> int:
        return self.cfg.width

    def _patchify(self, x: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        ps = self.cfg.vit_patch_size
        if c != 3 or h != self.cfg.input_size or w != self.cfg.input_size:
            raise ShapeMismatch(
                f"expected (B, 3, {self.cfg.input_size}, {self.cfg.input_size}), got {tuple(x.shape)}"
            )
        x = x.view(b, c, h // ps, ps, w // ps, ps)
        x = x.permute(0, 2, 4, 1, 3, 5).reshape(b, (h // ps) * (w // ps), c * ps * ps)
        return x

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        tokens = self.patch_embed(self._patchify(x))
        cls = self.cls_token.expand(tokens.shape[0], -1, -1)
        h = torch.cat([cls, tokens], dim=1) + self.pos_embed
        assert h.shape[1] == self.cfg.n_tokens
        for blk in self.blocks:
            h = blk(h)
            assert h.shape[1] == self.cfg.n_tokens
        return self.norm(h)[:, 0, :]


class ExternalEncoderAdapter(nn.Module):
    """Seam for pretrained encoders: wraps any module mapping
    (B, 3, S, S) -> (B, width). Weight files load through the same
    checkpoint + manifest format as the toy encoder."""

    def __init__(self, module: nn.Module, cfg: EncoderConfig = PRETRAINED_ENCODER_CONFIG):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.module = module

    @property
    def width(self) -> int:
        return self.cfg.width

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = self.module(x)
        if out.ndim != 2 or out.shape[1] != self.cfg.width:
            raise ShapeMismatch(
                f"adapter expected (B, {self.cfg.width}) output, got {tuple(out.shape)}"
            )
        return out


def build_encoder(cfg: EncoderConfig, seed: int) -> ToyViT:
    torch.manual_seed(seed)
    return ToyViT(cfg)


def build_projection(in_dim: int, out_dim: int, seed: int) -> nn.Linear:
    # Single linear layer, no bias: L2 normalization follows immediately.
    if out_dim < 2:
        raise ConfigError("projection.out_dim", f"must be >= 2, got {out_dim}")
    torch.manual_seed(seed)
    return nn.Linear(in_dim, out_dim, bias=False)


def build_classifier(in_dim: int, seed: int, n_classes: int = 2) -> nn.Linear:
    torch.manual_seed(seed)
    return nn.Linear(in_dim, n_classes)


def images_to_tensor(
    images, input_size: int, dtype: torch.dtype = torch.float32
) -> torch.Tensor:
    """Stack (H, W, 3) arrays into (B, 3, S, S), bilinear-resized to S
    (align_corners=False) when the source size differs."""
    arr = np.stack([np.asarray(im, dtype=np.float64) for im in images])
    if arr.ndim != 4 or arr.shape[3] != 3:
        raise ShapeMismatch(f"expected (B, H, W, 3) images, got {arr.shape}")
    x = torch.from_numpy(arr).permute(0, 3, 1, 2).to(dtype)
    if x.shape[2] != input_size or x.shape[3] != input_size:
        x = F.interpolate(
            x, size=(input_size, input_size), mode="bilinear", align_corners=False
        )
    return x


def encode(images, encoder: nn.Module, batch_size: int = 128) -> np.ndarray:
    """Inference-mode embeddings as a float64 (n, d_r) numpy matrix."""
    dtype = next(encoder.parameters()).dtype
    encoder.eval()
    outs = []
    with torch.no_grad():
        for i in range(0, len(images), batch_size):
            x = images_to_tensor(images[i : i + batch_size], encoder.cfg.input_size, dtype)
            outs.append(encoder(x).double().numpy())
    out = np.concatenate(outs, axis=0)
    if not np.isfinite(out).all():
        raise ShapeMismatch("encoder produced non-finite embeddings")
    return out


def project(r: np.ndarray, head: nn.Linear) -> np.ndarray:
    """Linear map then row normalization; rows come back unit-norm."""
    r = np.asarray(r, dtype=np.float64)
    if r.ndim != 2 or r.shape[1] != head.in_features:
        raise ShapeMismatch(f"expected (n, {head.in_features}), got {r.shape}")
    w = head.weight.detach().double().numpy()
    z = r @ w.T
    if head.bias is not None:
        z = z + head.bias.detach().double().numpy()
    return normalize_rows(z)


def classify(r: np.ndarray, head: nn.Linear) -> np.ndarray:
    """Affine logits (n, 2)."""
    r = np.asarray(r, dtype=np.float64)
    if r.ndim != 2 or r.shape[1] != head.in_features:
        raise ShapeMismatch(f"expected (n, {head.in_features}), got {r.shape}")
    logits = r @ head.weight.detach().double().numpy().T
    logits = logits + head.bias.detach().double().numpy()
    return logits


def predict_from_logits(logits: np.ndarray) -> np.ndarray:
    """Argmax predictions; exact ties resolve to class 0."""
    logits = np.asarray(logits)
    return np.argmax(logits, axis=1)  # first max wins => ties -> class 0


# --- checkpoints ---------------------------------------------------------

MANIFEST_SUFFIX = ".manifest.json"


def save_checkpoint(module: nn.Module, path: str, manifest: dict) -> None:
    """Weight blob at `path` plus a JSON manifest side file."""
    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        torch.save(module.state_dict(), path)
        with open(path + MANIFEST_SUFFIX, "w") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
    except OSError as e:
        raise IoFailure(f"cannot write checkpoint {path}: {e}") from e


def load_manifest(path: str) -> dict:
    mpath = path + MANIFEST_SUFFIX
    if not os.path.isfile(path) or not os.path.isfile(mpath):
        raise IoFailure(f"checkpoint or manifest missing for {path}")
    with open(mpath) as f:
        return json.load(f)


def load_checkpoint(module: nn.Module, path: str,
                    expected_config: dict | None = None) -> dict:
    """Restore weights into `module`; returns the manifest.

    Raises ManifestMismatch when `expected_config` differs from the config
    recorded at save time.
    """
    manifest = load_manifest(path)
    if expected_config is not None and manifest.get("config") != expected_config:
        raise ManifestMismatch(
            f"checkpoint {path} config {manifest.get('config')} "
            f"!= expected {expected_config}"
        )
    state = torch.load(path, weights_only=True)
    try:
        module.load_state_dict(state)
    except RuntimeError as e:
        raise ManifestMismatch(f"checkpoint {path} does not fit module: {e}") from e
    return manifest


def encoder_manifest(cfg: EncoderConfig, *, stage: str, epoch: int, seed: int,
                     history=None, extra: dict | None = None) -> dict:
    m = {
        "config": asdict(cfg),
        "stage": stage,
        "epoch": epoch,
        "seed": seed,
        "history": history if history is not None else [],
    }
    if extra:
        m.update(extra)
    return m
