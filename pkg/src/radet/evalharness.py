"""Evaluation reports and degradation-robustness sweeps."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .degrade import gaussian_blur, jpeg_like
from .errors import ConfigurationError, DomainError
from .metrics import accuracy, average_precision

DEFAULT_GRID = (("blur", 0.8), ("blur", 1.0), ("blur", 1.5),
                ("jpeg", 95.0), ("jpeg", 90.0), ("jpeg", 85.0))


@dataclass(frozen=True)
class EvalRow:
    source: str
    kind: str          # "none", "blur", "jpeg"
    strength: float
    acc: float         # percent
    ap: float          # percent
    branch_ap: dict = field(default_factory=dict)  # per-branch-only AP %


@dataclass(frozen=True)
class EvalReport:
    rows: list
    mean_acc: float
    mean_ap: float

    CSV_COLUMNS = ("source", "kind", "strength", "acc", "ap", "branch_ap")

    def to_csv(self) -> str:
        lines = [",".join(self.CSV_COLUMNS)]
        for r in self.rows:
            lines.append(",".join([
                r.source, r.kind, f"{r.strength:g}", f"{r.acc:.6f}",
                f"{r.ap:.6f}", json.dumps(r.branch_ap).replace(",", ";")]))
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps({"mean_acc": self.mean_acc, "mean_ap": self.mean_ap,
                           "rows": [asdict(r) for r in self.rows]}, indent=2)


def _degrade(images: np.ndarray, kind: str, strength: float) -> np.ndarray:
    if kind == "none":
        return images
    if kind == "blur":
        return gaussian_blur(images, strength)
    if kind == "jpeg":
        return jpeg_like(images, strength)
    raise ConfigurationError(f"unknown degradation kind {kind!r}")


def _row(model, source, images, labels, kind, strength,
         branch_ablation: bool) -> EvalRow:
    imgs = _degrade(images, kind, strength)
    scores = model.score_images(imgs)
    branch_ap = {}
    if branch_ablation:
        for b in model.heads_.branches:
            branch_ap[b] = 100.0 * average_precision(
                model.score_images(imgs, branches=(b,)), labels)
    return EvalRow(source=source, kind=kind, strength=float(strength),
                   acc=100.0 * accuracy(scores, labels),
                   ap=100.0 * average_precision(scores, labels),
                   branch_ap=branch_ap)


def evaluate(model, datasets: dict, branch_ablation: bool = False) -> EvalReport:
    """Per-source ACC/AP.  datasets: {name: (images, labels)}."""
    if not datasets:
        raise DomainError("evaluate needs at least one dataset")
    rows = [
        _row(model, name, imgs, labels, "none", 0.0, branch_ablation)
        for name, (imgs, labels) in datasets.items()]
    return EvalReport(rows=rows,
                      mean_acc=float(np.mean([r.acc for r in rows])),
                      mean_ap=float(np.mean([r.ap for r in rows])))


def robustness_sweep(model, name: str, images, labels,
                     grid=DEFAULT_GRID, branch_ablation: bool = True) -> EvalReport:
    """Baseline row plus one row per degradation in the grid."""
    rows = [_row(model, name, images, labels, "none", 0.0, branch_ablation)]
    rows += [_row(model, name, images, labels, kind, strength, branch_ablation)
             for kind, strength in grid]
    return EvalReport(rows=rows,
                      mean_acc=float(np.mean([r.acc for r in rows])),
                      mean_ap=float(np.mean([r.ap for r in rows])))
