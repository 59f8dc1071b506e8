"""Composite detector objective: stable BCE plus the similarity margin hinge."""
from __future__ import annotations

import torch

MARGIN_DEFAULT = 0.1  # gamma


def loss_bce(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy on logits (label 1 = real)."""
    return torch.nn.functional.binary_cross_entropy_with_logits(
        logits.reshape(-1), labels.reshape(-1).to(logits.dtype))


def loss_ra(sims: torch.Tensor, labels: torch.Tensor,
            gamma: float = MARGIN_DEFAULT):
    """Hinge on the batch-mean similarity gap: ReLU((mean s_fake - mean s_real) + gamma).

    Returns (loss, skipped).  Batches missing one of the classes contribute 0
    with skipped=True instead of raising: the margin is a two-class statistic.
    """
    sims = sims.reshape(-1)
    labels = labels.reshape(-1)
    real = labels == 1
    fake = labels == 0
    if not bool(real.any()) or not bool(fake.any()):
        return sims.sum() * 0.0, True
    gap = sims[fake].mean() - sims[real].mean()
    return torch.relu(gap + gamma), False


def loss_comp(logits: torch.Tensor, sims: torch.Tensor, labels: torch.Tensor,
              gamma: float = MARGIN_DEFAULT) -> torch.Tensor:
    """Composite objective loss_bce + loss_ra."""
    ra, _ = loss_ra(sims, labels, gamma)
    return loss_bce(logits, labels) + ra
