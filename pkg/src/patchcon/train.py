"""Two-stage training: contrastive pre-training, frozen-feature linear
classification, plus the end-to-end cross-entropy baseline arm.

Stage 1 runs its full epoch budget; early stopping (patience on validation
F1, strict improvement, best checkpoint returned) applies to Stage 2 and
the baseline only.
"""

from __future__ import annotations

import hashlib
import logging
import struct
import time
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .augment import AugmentPolicy, two_view
from .errors import (
    ConfigError,
    IoFailure,
    NonFiniteLoss,
    NoPositives,
    ShapeMismatch,
    ZeroRow,
)
from .evaluate import binary_f1
from .losses import LossConfig, cross_entropy, supcon_loss
from .model import images_to_tensor, predict_from_logits

log = logging.getLogger(__name__)

ADAMW_BETAS = (0.9, 0.999)
ADAMW_EPS = 1e-8


@dataclass(frozen=True)
class Stage1Config:
    lr: float = 5e-5
    epochs: int = 50
    batch_size: int = 32  # samples per step; two views make 64 rows
    weight_decay: float = 0.01

    def validate(self, prefix: str = "train.stage1") -> None:
        if self.lr < 0:
            raise ConfigError(f"{prefix}.lr", f"must be >= 0, got {self.lr}")
        if self.epochs < 1:
            raise ConfigError(f"{prefix}.epochs", f"must be >= 1, got {self.epochs}")
        if self.batch_size < 2:
            raise ConfigError(f"{prefix}.batch_size", "stage 1 needs batch >= 2")


@dataclass(frozen=True)
class Stage2Config:
    lr: float = 0.01
    epochs: int = 50
    patience: int = 5
    batch_size: int = 64
    weight_decay: float = 0.01

    def validate(self, prefix: str = "train.stage2") -> None:
        if self.lr < 0:
            raise ConfigError(f"{prefix}.lr", f"must be >= 0, got {self.lr}")
        if self.epochs < 1:
            raise ConfigError(f"{prefix}.epochs", f"must be >= 1, got {self.epochs}")
        if self.patience < 1:
            raise ConfigError(f"{prefix}.patience", f"must be >= 1, got {self.patience}")
        if self.batch_size < 1:
            raise ConfigError(f"{prefix}.batch_size", "must be >= 1")


@dataclass(frozen=True)
class BaselineConfig(Stage2Config):
    lr: float = 1e-5

    def validate(self, prefix: str = "train.baseline") -> None:
        super().validate(prefix)


@dataclass(frozen=True)
class TrainConfig:
    stage1: Stage1Config = field(default_factory=Stage1Config)
    stage2: Stage2Config = field(default_factory=Stage2Config)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    seed: int = 0

    def validate(self) -> None:
        self.stage1.validate()
        self.stage2.validate()
        self.baseline.validate()


# --- early stopping -------------------------------------------------------

@dataclass(frozen=True)
class EarlyStopState:
    best_metric: float = float("-inf")
    best_epoch: int = 0
    epochs_since_improve: int = 0
    n_observed: int = 0


def early_stopping_step(
    state: EarlyStopState, metric: float, patience: int
) -> tuple[EarlyStopState, bool]:
    """One observation of the maximized metric; improvement is strict."""
    n = state.n_observed + 1
    if metric > state.best_metric:
        state = EarlyStopState(metric, n, 0, n)
    else:
        state = replace(
            state, epochs_since_improve=state.epochs_since_improve + 1, n_observed=n
        )
    return state, state.epochs_since_improve >= patience


# --- helpers ---------------------------------------------------------------

def state_hash(module: torch.nn.Module) -> str:
    """SHA-256 over the serialized parameter tensors (frozen-ness checks)."""
    h = hashlib.sha256()
    for name, p in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(p.detach().cpu().numpy().tobytes())
    return h.hexdigest()


def _finite_or_raise(loss: torch.Tensor, where: str) -> float:
    v = float(loss.item())
    if not np.isfinite(v):
        raise NonFiniteLoss(f"non-finite loss at {where}")
    return v


def _normalize_torch(z: torch.Tensor) -> torch.Tensor:
    norms = z.norm(dim=1, keepdim=True)
    if bool((norms < 1e-12).any()):
        raise ZeroRow("projection produced a zero row during training")
    return z / norms


def _epoch_record(epoch: int, split: str, *, loss=None, f1=None, lr=None,
                  wall_clock_s=None) -> dict:
    return {"epoch": epoch, "split": split, "loss": loss, "f1": f1,
            "lr": lr, "wall_clock_s": wall_clock_s}


# --- stage 1 ----------------------------------------------------------------

def train_stage1(
    encoder: torch.nn.Module,
    projector: torch.nn.Module,
    images: list[np.ndarray],
    labels: np.ndarray,
    cfg: Stage1Config,
    loss_cfg: LossConfig,
    policy: AugmentPolicy,
    seed: int,
) -> list[dict]:
    """Contrastive pre-training; mutates encoder and projector in place.

    Per epoch the sample order is reshuffled from a seeded stream; each
    sample contributes two augmented views at adjacent rows (2k, 2k+1).
    Runs the full epoch budget, returns the per-epoch history.
    """
    cfg.validate()
    loss_cfg.validate()
    labels = np.asarray(labels)
    if len(images) != labels.shape[0] or len(images) == 0:
        raise ShapeMismatch(f"{len(images)} images vs {labels.shape} labels")
    if np.unique(labels).size < 2:
        log.warning("stage 1 training set has a single class; only the "
                    "two-view positives will drive the loss")
    shuffle_rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(2)[0])
    aug_rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(2)[1])
    dtype = next(encoder.parameters()).dtype
    opt = torch.optim.AdamW(
        list(encoder.parameters()) + list(projector.parameters()),
        lr=cfg.lr, betas=ADAMW_BETAS, eps=ADAMW_EPS, weight_decay=cfg.weight_decay,
    )
    encoder.train()
    projector.train()
    history: list[dict] = []
    n = len(images)
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        perm = shuffle_rng.permutation(n)
        batch_losses = []
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            if idx.size == 1:
                log.warning("stage 1 final batch of a single sample "
                            "(loss is identically 0)")
            views, view_labels = [], []
            for i in idx:
                va, vb = two_view(images[i], policy, aug_rng)
                views.extend((va, vb))
                view_labels.extend((labels[i], labels[i]))
            x = images_to_tensor(views, encoder.cfg.input_size, dtype)
            r = encoder(x)
            if not torch.isfinite(r).all():
                raise NonFiniteLoss(f"non-finite embeddings at stage1 epoch {epoch}")
            z = _normalize_torch(projector(r))
            try:
                loss = supcon_loss(z, np.asarray(view_labels), loss_cfg)
            except NoPositives as e:
                raise NoPositives(
                    f"batch labels {sorted(set(view_labels))}: {e}"
                ) from e
            batch_losses.append(_finite_or_raise(loss, f"stage1 epoch {epoch}"))
            opt.zero_grad()
            loss.backward()
            opt.step()
        history.append(_epoch_record(
            epoch, "train", loss=float(np.mean(batch_losses)), lr=cfg.lr,
            wall_clock_s=time.perf_counter() - t0,
        ))
    return history


# --- frozen features --------------------------------------------------------

def extract_frozen_features(
    encoder: torch.nn.Module, images: list[np.ndarray], batch_size: int = 128
) -> np.ndarray:
    """Inference-mode embeddings (float32, projection head NOT applied)."""
    from .model import encode

    if not images:
        raise ShapeMismatch("no images to extract features from")
    return encode(images, encoder, batch_size=batch_size).astype(np.float32)


_CACHE_MAGIC = b"PCFC"
_CACHE_VERSION = 1


def write_feature_cache(path: str, features: np.ndarray, labels=None) -> None:
    """Binary cache: magic 'PCFC', u32 version, u32 n, u32 d, u8 has_labels,
    then row-major float32 features, then labels as bytes."""
    features = np.ascontiguousarray(features, dtype=np.float32)
    if features.ndim != 2:
        raise ShapeMismatch(f"features must be 2-D, got {features.shape}")
    has_labels = labels is not None
    try:
        with open(path, "wb") as f:
            f.write(_CACHE_MAGIC)
            f.write(struct.pack("<IIIB", _CACHE_VERSION, *features.shape, has_labels))
            f.write(features.tobytes())
            if has_labels:
                f.write(np.asarray(labels, dtype=np.uint8).tobytes())
    except OSError as e:
        raise IoFailure(f"cannot write feature cache {path}: {e}") from e


def read_feature_cache(path: str) -> tuple[np.ndarray, np.ndarray | None]:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise IoFailure(f"cannot read feature cache {path}: {e}") from e
    if blob[:4] != _CACHE_MAGIC:
        raise IoFailure(f"{path} is not a feature cache (bad magic)")
    version, n, d, has_labels = struct.unpack("<IIIB", blob[4:17])
    if version != _CACHE_VERSION:
        raise IoFailure(f"unsupported cache version {version} in {path}")
    body = blob[17:]
    feats = np.frombuffer(body[: 4 * n * d], dtype=np.float32).reshape(n, d).copy()
    labels = None
    if has_labels:
        labels = np.frombuffer(body[4 * n * d : 4 * n * d + n], dtype=np.uint8).copy()
    return feats, labels


# --- stage 2 ----------------------------------------------------------------

def train_stage2(
    classifier: torch.nn.Module,
    train_features: np.ndarray,
    train_labels: np.ndarray,
    val_features: np.ndarray,
    val_labels: np.ndarray,
    cfg: Stage2Config,
    seed: int,
) -> tuple[list[dict], EarlyStopState]:
    """Linear classifier on frozen features; early stopping on validation
    F1 (maximize, strict). Leaves `classifier` at the best-epoch weights."""
    cfg.validate()
    train_features = np.asarray(train_features, dtype=np.float32)
    val_features = np.asarray(val_features, dtype=np.float32)
    if train_features.shape[1] != val_features.shape[1]:
        raise ShapeMismatch("train/val feature dims differ")
    xt = torch.from_numpy(train_features)
    yt = torch.as_tensor(np.asarray(train_labels), dtype=torch.long)
    xv = torch.from_numpy(val_features)
    yv_np = np.asarray(val_labels)
    rng = np.random.default_rng(seed)
    opt = torch.optim.AdamW(classifier.parameters(), lr=cfg.lr,
                            betas=ADAMW_BETAS, eps=ADAMW_EPS,
                            weight_decay=cfg.weight_decay)
    history: list[dict] = []
    stop_state = EarlyStopState()
    best_state = {k: v.clone() for k, v in classifier.state_dict().items()}
    n = xt.shape[0]
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        classifier.train()
        perm = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, cfg.batch_size):
            idx = torch.from_numpy(perm[start : start + cfg.batch_size])
            logits = classifier(xt[idx])
            if not torch.isfinite(logits).all():
                raise NonFiniteLoss(f"non-finite logits at stage2 epoch {epoch}")
            loss = cross_entropy(logits, yt[idx])
            batch_losses.append(_finite_or_raise(loss, f"stage2 epoch {epoch}"))
            opt.zero_grad()
            loss.backward()
            opt.step()
        classifier.eval()
        with torch.no_grad():
            preds = predict_from_logits(classifier(xv).numpy())
        val_f1 = binary_f1(preds, yv_np)
        history.append(_epoch_record(
            epoch, "train", loss=float(np.mean(batch_losses)), lr=cfg.lr,
            wall_clock_s=time.perf_counter() - t0,
        ))
        history.append(_epoch_record(epoch, "val", f1=val_f1))
        stop_state, stop = early_stopping_step(stop_state, val_f1, cfg.patience)
        if stop_state.best_epoch == epoch:
            best_state = {k: v.clone() for k, v in classifier.state_dict().items()}
        if stop:
            break
    classifier.load_state_dict(best_state)
    return history, stop_state


# --- cross-entropy baseline -------------------------------------------------

def fine_tune_baseline(
    encoder: torch.nn.Module,
    classifier: torch.nn.Module,
    train_images: list[np.ndarray],
    train_labels: np.ndarray,
    val_images: list[np.ndarray],
    val_labels: np.ndarray,
    cfg: BaselineConfig,
    seed: int,
) -> tuple[list[dict], EarlyStopState]:
    """End-to-end cross-entropy fine-tuning (no contrastive stage); the
    comparison arm for SupCon-vs-CE experiments. Best-epoch weights are
    restored into both modules."""
    cfg.validate()
    labels_t = torch.as_tensor(np.asarray(train_labels), dtype=torch.long)
    dtype = next(encoder.parameters()).dtype
    rng = np.random.default_rng(seed)
    params = list(encoder.parameters()) + list(classifier.parameters())
    opt = torch.optim.AdamW(params, lr=cfg.lr, betas=ADAMW_BETAS,
                            eps=ADAMW_EPS, weight_decay=cfg.weight_decay)
    history: list[dict] = []
    stop_state = EarlyStopState()

    def snapshot():
        return (
            {k: v.clone() for k, v in encoder.state_dict().items()},
            {k: v.clone() for k, v in classifier.state_dict().items()},
        )

    best = snapshot()
    n = len(train_images)
    val_labels_np = np.asarray(val_labels)
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        encoder.train()
        classifier.train()
        perm = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            x = images_to_tensor([train_images[i] for i in idx],
                                 encoder.cfg.input_size, dtype)
            logits = classifier(encoder(x))
            if not torch.isfinite(logits).all():
                raise NonFiniteLoss(f"non-finite logits at baseline epoch {epoch}")
            loss = cross_entropy(logits, labels_t[idx])
            batch_losses.append(_finite_or_raise(loss, f"baseline epoch {epoch}"))
            opt.zero_grad()
            loss.backward()
            opt.step()
        encoder.eval()
        classifier.eval()
        with torch.no_grad():
            logit_chunks = []
            for start in range(0, len(val_images), cfg.batch_size):
                x = images_to_tensor(val_images[start : start + cfg.batch_size],
                                     encoder.cfg.input_size, dtype)
                logit_chunks.append(classifier(encoder(x)).numpy())
            preds = predict_from_logits(np.concatenate(logit_chunks))
        val_f1 = binary_f1(preds, val_labels_np)
        history.append(_epoch_record(
            epoch, "train", loss=float(np.mean(batch_losses)), lr=cfg.lr,
            wall_clock_s=time.perf_counter() - t0,
        ))
        history.append(_epoch_record(epoch, "val", f1=val_f1))
        stop_state, stop = early_stopping_step(stop_state, val_f1, cfg.patience)
        if stop_state.best_epoch == epoch:
            best = snapshot()
        if stop:
            break
    encoder.load_state_dict(best[0])
    classifier.load_state_dict(best[1])
    return history, stop_state
