"""Supervised contrastive loss (two variants), cross-entropy, and the
brute-force reference oracle.

Variant "as-printed" takes the log of the positive-averaged ratio:

    L = sum_i -log( (1/|P(i)|) sum_{p in P(i)} exp(z_i.z_p / t)
                    / sum_{a in A(i)} exp(z_i.z_a / t) )

Variant "khosla-out" averages the logs instead (L_out of Khosla et al.):

    L = sum_i (-1/|P(i)|) sum_{p in P(i)} log( exp(z_i.z_p / t)
                    / sum_{a in A(i)} exp(z_i.z_a / t) )

In both, A(i) is every other row in the batch and anchors with an empty
positive set are skipped. The vectorized path subtracts the per-anchor max
logit before exponentiation for numerical stability.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .errors import ConfigError, NonUnitRows, NoPositives, ShapeMismatch

VARIANTS = ("as-printed", "khosla-out")
_UNIT_TOL = 1e-4


@dataclass(frozen=True)
class LossConfig:
    temperature: float = 0.03
    variant: str = "as-printed"

    def validate(self) -> None:
        if self.temperature <= 0:
            raise ConfigError("loss.temperature", f"must be > 0, got {self.temperature}")
        if self.variant not in VARIANTS:
            raise ConfigError("loss.variant", f"{self.variant!r} not in {VARIANTS}")


def validate_contrastive_batch(z, labels) -> None:
    """Batch contract: >= 2 unit rows, adjacent view pairs share labels."""
    z = np.asarray(z, dtype=np.float64) if not torch.is_tensor(z) else z.detach().numpy()
    labels = np.asarray(labels)
    if z.ndim != 2 or z.shape[0] < 2 or z.shape[0] % 2 != 0:
        raise ShapeMismatch(f"expected an even number (>= 2) of rows, got {z.shape}")
    if labels.shape != (z.shape[0],):
        raise ShapeMismatch(f"labels shape {labels.shape} vs {z.shape[0]} rows")
    norms = np.linalg.norm(z, axis=1)
    if np.abs(norms - 1.0).max() > _UNIT_TOL:
        raise NonUnitRows(f"worst row norm {norms[np.argmax(np.abs(norms - 1))]:.6f}")
    if not np.array_equal(labels[0::2], labels[1::2]):
        raise ShapeMismatch("paired views (rows 2k, 2k+1) must share labels")


def _check_unit(z: torch.Tensor) -> None:
    norms = z.detach().norm(dim=1)
    worst = (norms - 1.0).abs().max().item()
    if worst > _UNIT_TOL:
        raise NonUnitRows(f"rows deviate from unit norm by up to {worst:.2e}")


def supcon_loss(z, labels, cfg: LossConfig = LossConfig()):
    """Supervised contrastive loss over a batch of unit-norm rows.

    Accepts numpy arrays (returns a float) or torch tensors (returns a
    scalar tensor on the autograd graph). Raises NoPositives when every
    anchor's positive set is empty.
    """
    cfg.validate()
    was_tensor = torch.is_tensor(z)
    if not was_tensor:
        z = torch.from_numpy(np.asarray(z, dtype=np.float64))
    labels_t = torch.as_tensor(np.asarray(labels), dtype=torch.long)
    if z.ndim != 2 or z.shape[0] < 2 or labels_t.shape != (z.shape[0],):
        raise ShapeMismatch(f"z shape {tuple(z.shape)}, labels shape {tuple(labels_t.shape)}")
    _check_unit(z)

    n = z.shape[0]
    sim = (z @ z.T) / cfg.temperature
    off_diag = ~torch.eye(n, dtype=torch.bool)
    pos_mask = (labels_t[:, None] == labels_t[None, :]) & off_diag
    n_pos = pos_mask.sum(dim=1)
    anchors = n_pos > 0
    if not bool(anchors.any()):
        raise NoPositives("every anchor has an empty positive set")

    # Stabilize per anchor over A(i); detached so gradients match the raw form.
    row_max = sim.masked_fill(~off_diag, float("-inf")).max(dim=1, keepdim=True).values
    logits = sim - row_max.detach()
    exp_logits = torch.exp(logits) * off_diag.to(z.dtype)
    denom = exp_logits.sum(dim=1)

    if cfg.variant == "as-printed":
        pos_sum = (exp_logits * pos_mask.to(z.dtype)).sum(dim=1)
        per_anchor = -torch.log(pos_sum[anchors] / n_pos[anchors] / denom[anchors])
    else:  # khosla-out
        log_prob = logits - torch.log(denom)[:, None]
        pos_log = (log_prob * pos_mask.to(z.dtype)).sum(dim=1)
        per_anchor = -pos_log[anchors] / n_pos[anchors]
    loss = per_anchor.sum()
    if not torch.isfinite(loss):
        raise ShapeMismatch("supcon loss is non-finite")
    return loss if was_tensor else float(loss.item())


def supcon_loss_bruteforce(z, labels, cfg: LossConfig = LossConfig()) -> float:
    """Literal triple-loop transcription of the formula, float64,
    no vectorization and no stabilization. Test oracle; 2N <= 64."""
    cfg.validate()
    z = np.asarray(z, dtype=np.float64)
    labels = np.asarray(labels)
    if z.shape[0] > 64:
        raise ShapeMismatch("brute-force oracle is limited to 64 rows")
    _check_unit(torch.from_numpy(z))
    n = z.shape[0]
    total = 0.0
    any_positive = False
    for i in range(n):
        positives = [p for p in range(n) if p != i and labels[p] == labels[i]]
        if not positives:
            continue
        any_positive = True
        denom = 0.0
        for a in range(n):
            if a != i:
                denom += math.exp(float(np.dot(z[i], z[a])) / cfg.temperature)
        if cfg.variant == "as-printed":
            num = 0.0
            for p in positives:
                num += math.exp(float(np.dot(z[i], z[p])) / cfg.temperature)
            total += -math.log((num / len(positives)) / denom)
        else:
            acc = 0.0
            for p in positives:
                ratio = math.exp(float(np.dot(z[i], z[p])) / cfg.temperature) / denom
                acc += math.log(ratio)
            total += -acc / len(positives)
    if not any_positive:
        raise NoPositives("every anchor has an empty positive set")
    return total


def cross_entropy(logits, labels):
    """Mean -log softmax(logits)[label], log-sum-exp stabilized.

    Same numpy/torch duality as supcon_loss.
    """
    was_tensor = torch.is_tensor(logits)
    if not was_tensor:
        logits = torch.from_numpy(np.asarray(logits, dtype=np.float64))
    labels_t = torch.as_tensor(np.asarray(labels), dtype=torch.long)
    if logits.ndim != 2 or labels_t.shape != (logits.shape[0],):
        raise ShapeMismatch(
            f"logits shape {tuple(logits.shape)}, labels shape {tuple(labels_t.shape)}"
        )
    if not torch.isfinite(logits).all():
        raise ShapeMismatch("non-finite logits")
    log_probs = logits - torch.logsumexp(logits, dim=1, keepdim=True)
    loss = -log_probs[torch.arange(logits.shape[0]), labels_t].mean()
    return loss if was_tensor else float(loss.item())
