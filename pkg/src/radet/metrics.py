"""Accuracy and average precision with oracle-exact definitions."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError


def _validate(scores, labels):
    scores = np.asarray(scores, dtype=float).ravel()
    labels = np.asarray(labels).ravel()
    if len(scores) == 0 or len(scores) != len(labels):
        raise DomainError("scores and labels must be nonempty and same length")
    if not np.all(np.isin(labels, (0, 1))):
        raise DomainError("labels must be 0/1")
    return scores, labels.astype(int)


def accuracy(scores, labels, threshold: float = 0.5) -> float:
    """Fraction correct at threshold; a score exactly at threshold is positive."""
    scores, labels = _validate(scores, labels)
    pred = (scores >= threshold).astype(int)
    return float((pred == labels).mean())


def _rank_ap(order: np.ndarray, labels: np.ndarray) -> float:
    ranked = labels[order]
    hits = np.cumsum(ranked)
    prec_at_pos = hits[ranked == 1] / (np.nonzero(ranked)[0] + 1)
    return float(prec_at_pos.mean())


def average_precision(scores, labels, variant: str = "rank") -> float:
    """AP = mean precision at the rank of each positive (descending scores).

    Ties are broken by stable original order.  variant="interpolated" applies
    the precision envelope (precision monotone non-increasing in recall)
    before averaging.
    """
    scores, labels = _validate(scores, labels)
    if labels.sum() == 0:
        raise DomainError("average precision needs at least one positive")
    if variant not in ("rank", "interpolated"):
        raise ConfigurationError(f"unknown AP variant {variant!r}")
    order = np.argsort(-scores, kind="stable")
    if variant == "rank":
        return _rank_ap(order, labels)
    ranked = labels[order]
    prec = np.cumsum(ranked) / np.arange(1, len(ranked) + 1)
    env = np.maximum.accumulate(prec[::-1])[::-1]
    return float(env[ranked == 1].mean())


@dataclass(frozen=True)
class ApTieBounds:
    value: float     # stable-order AP
    best: float      # positives first within each tied group
    worst: float     # positives last within each tied group
    has_ties: bool


def ap_tie_bounds(scores, labels) -> ApTieBounds:
    """AP together with its range over tie-breaking orders."""
    scores, labels = _validate(scores, labels)
    if labels.sum() == 0:
        raise DomainError("average precision needs at least one positive")
    stable = np.argsort(-scores, kind="stable")
    has_ties = len(np.unique(scores)) < len(scores)
    # Positives-first / positives-last inside each tied block.
    best = np.lexsort((-labels, -scores))
    worst = np.lexsort((labels, -scores))
    return ApTieBounds(value=_rank_ap(stable, labels),
                       best=_rank_ap(best, labels),
                       worst=_rank_ap(worst, labels),
                       has_ties=bool(has_ties))
