"""Embedding ingestion: RAEMB1 binary rows or a documented CSV layout.

Binary layout: magic RAEMB1 | count u32 LE | dim u32 LE | flags u32 LE
(bit 0: residual-feature block present) | res_dim u32 LE | rows.
Each row: label u8, clean embedding f32 x dim, perturbed embedding f32 x dim,
optional residual features f32 x res_dim.

CSV alternative (small files): header
label,e0..e{D-1},ep0..ep{D-1}[,r0..r{R-1}] with one row per sample.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
import torch

from ..errors import DataFormatError
from .model import RADetector

MAGIC = b"RAEMB1"


@dataclass(frozen=True)
class EmbeddingSet:
    labels: np.ndarray      # (N,) ints in {0,1}
    clean: np.ndarray       # (N, D) float32
    perturbed: np.ndarray   # (N, D) float32
    residual: np.ndarray | None  # (N, R) float32 or None


def write_embeddings(path, emb: EmbeddingSet) -> None:
    n, d = emb.clean.shape
    if emb.perturbed.shape != (n, d) or len(emb.labels) != n:
        raise DataFormatError("inconsistent embedding array shapes")
    res = emb.residual
    res_dim = 0 if res is None else res.shape[1]
    flags = 1 if res is not None else 0
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIII", n, d, flags, res_dim))
        for i in range(n):
            fh.write(struct.pack("<B", int(emb.labels[i])))
            fh.write(np.asarray(emb.clean[i], dtype="<f4").tobytes())
            fh.write(np.asarray(emb.perturbed[i], dtype="<f4").tobytes())
            if res is not None:
                fh.write(np.asarray(res[i], dtype="<f4").tobytes())


def read_embeddings(path) -> EmbeddingSet:
    if str(path).endswith(".csv"):
        return _read_csv(path)
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:6] != MAGIC:
        raise DataFormatError(f"bad embedding magic at offset 0: {data[:6]!r}")
    n, d, flags, res_dim = struct.unpack_from("<IIII", data, 6)
    has_res = bool(flags & 1)
    row = 1 + 4 * d * 2 + (4 * res_dim if has_res else 0)
    expect = 22 + n * row
    if len(data) != expect:
        raise DataFormatError(
            f"embedding file length {len(data)} != expected {expect} "
            f"(truncation at offset {min(len(data), expect)})")
    labels = np.empty(n, dtype=int)
    clean = np.empty((n, d), dtype=np.float32)
    pert = np.empty((n, d), dtype=np.float32)
    res = np.empty((n, res_dim), dtype=np.float32) if has_res else None
    off = 22
    for i in range(n):
        labels[i] = data[off]
        off += 1
        clean[i] = np.frombuffer(data, "<f4", d, off)
        off += 4 * d
        pert[i] = np.frombuffer(data, "<f4", d, off)
        off += 4 * d
        if has_res:
            res[i] = np.frombuffer(data, "<f4", res_dim, off)
            off += 4 * res_dim
    if not np.all(np.isin(labels, (0, 1))):
        raise DataFormatError("embedding labels must be 0/1")
    return EmbeddingSet(labels=labels, clean=clean, perturbed=pert, residual=res)


def _read_csv(path) -> EmbeddingSet:
    try:
        raw = np.genfromtxt(path, delimiter=",", names=True)
    except (OSError, ValueError) as exc:
        raise DataFormatError(f"bad embedding CSV {path}: {exc}") from exc
    names = list(raw.dtype.names or [])
    d = sum(1 for c in names if c.startswith("e") and not c.startswith("ep"))
    r = sum(1 for c in names if c.startswith("r"))
    if "label" not in names or d == 0 \
            or sum(1 for c in names if c.startswith("ep")) != d:
        raise DataFormatError("embedding CSV must have label,e*,ep*[,r*] columns")
    rows = np.atleast_1d(raw)
    get = lambda cols: np.stack([rows[c] for c in cols], axis=1).astype(np.float32)
    return EmbeddingSet(
        labels=rows["label"].astype(int),
        clean=get([f"e{i}" for i in range(d)]),
        perturbed=get([f"ep{i}" for i in range(d)]),
        residual=get([f"r{i}" for i in range(r)]) if r else None)


def write_embeddings_csv(path, emb: EmbeddingSet) -> None:
    n, d = emb.clean.shape
    r = 0 if emb.residual is None else emb.residual.shape[1]
    cols = ["label"] + [f"e{i}" for i in range(d)] + \
        [f"ep{i}" for i in range(d)] + [f"r{i}" for i in range(r)]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(cols) + "\n")
        for i in range(n):
            vals = [str(int(emb.labels[i]))]
            vals += [repr(float(v)) for v in emb.clean[i]]
            vals += [repr(float(v)) for v in emb.perturbed[i]]
            if r:
                vals += [repr(float(v)) for v in emb.residual[i]]
            fh.write(",".join(vals) + "\n")


def predict_from_embeddings(model: RADetector, clean: np.ndarray,
                            perturbed: np.ndarray,
                            residual: np.ndarray | None = None) -> np.ndarray:
    """Probability of 'real' from externally supplied features.

    The residual branch runs only when `residual` carries the flattened
    residual image (H*W*C values per row); otherwise that branch is skipped.
    """
    if not hasattr(model, "heads_"):
        raise DataFormatError("detector is not fitted/loaded")
    e = torch.from_numpy(np.asarray(clean, dtype=float))
    e2 = torch.from_numpy(np.asarray(perturbed, dtype=float))
    hw, c = model.image_hw, model.channels
    use = list(model.heads_.branches)
    if residual is not None and residual.shape[1] == hw * hw * c:
        r = torch.from_numpy(np.asarray(residual, dtype=float)
                             .reshape(-1, hw, hw, c).transpose(0, 3, 1, 2)
                             .copy())
    else:
        r = torch.zeros((len(e), c, hw, hw), dtype=torch.float64)
        use = [b for b in use if b != "res"]
    with torch.no_grad():
        logits = model.heads_.branch_logits(e, e2, r)
        agg = sum(logits[b] for b in use)
    return 1.0 / (1.0 + np.exp(-agg.numpy()))
