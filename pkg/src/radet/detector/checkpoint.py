"""Binary checkpoint format: magic RADET1, versioned length-prefixed sections.

Layout: magic (6 bytes) | version u32 LE | section count u32 LE | sections.
Each section: name length u16 LE, utf-8 name, payload length u64 LE, payload.
Sections written: "config" (JSON: estimator params + parameter schema +
encoder hash), "params" (little-endian float64 blob, schema order).
"""
from __future__ import annotations

import json
import struct

import numpy as np
import torch

from ..errors import DataFormatError
from .model import RADetector

MAGIC = b"RADET1"
VERSION = 1


def _param_items(model: RADetector):
    for group in ("drp_", "heads_"):
        sd = getattr(model, group).state_dict()
        for name in sorted(sd):
            yield f"{group}{name}", sd[name]


def save_checkpoint(model: RADetector, path) -> None:
    if not hasattr(model, "heads_"):
        raise DataFormatError("cannot checkpoint an unfitted detector")
    schema = []
    blobs = []
    for name, tensor in _param_items(model):
        arr = tensor.detach().cpu().numpy().astype("<f8")
        schema.append([name, list(arr.shape)])
        blobs.append(arr.tobytes())
    config = {"params": model.get_params(),
              "schema": schema,
              "encoder_hash": model.encoder_hash_,
              "trace": getattr(model, "trace_", None)}
    sections = [("config", json.dumps(config).encode()),
                ("params", b"".join(blobs))]
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(sections)))
        for name, payload in sections:
            raw = name.encode()
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<Q", len(payload)))
            fh.write(payload)


def _read_sections(data: bytes) -> dict:
    if data[:6] != MAGIC:
        raise DataFormatError(
            f"bad checkpoint magic at offset 0: {data[:6]!r}")
    version, count = struct.unpack_from("<II", data, 6)
    if version != VERSION:
        raise DataFormatError(f"unsupported checkpoint version {version}")
    off = 14
    sections = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", data, off)
            off += 2
            name = data[off:off + nlen].decode()
            off += nlen
            (plen,) = struct.unpack_from("<Q", data, off)
            off += 8
            payload = data[off:off + plen]
            if len(payload) != plen:
                raise DataFormatError(
                    f"truncated section {name!r} at offset {off}")
            off += plen
            sections[name] = payload
    except struct.error as exc:
        raise DataFormatError(f"corrupt section table at offset {off}: {exc}")
    return sections


def load_checkpoint(path) -> RADetector:
    with open(path, "rb") as fh:
        data = fh.read()
    sections = _read_sections(data)
    if "config" not in sections or "params" not in sections:
        raise DataFormatError("checkpoint missing config/params sections")
    config = json.loads(sections["config"])
    params = dict(config["params"])
    if isinstance(params.get("branches"), list):
        params["branches"] = tuple(params["branches"])
    model = RADetector(**params)
    model._build()
    if model.encoder_hash_ != config["encoder_hash"]:
        raise DataFormatError(
            "checkpoint encoder hash does not match the rebuilt encoder")
    blob = sections["params"]
    off = 0
    states = {"drp_": {}, "heads_": {}}
    for name, shape in config["schema"]:
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=off)
        off += 8 * n
        cut = name.index("_") + 1  # "drp_..." / "heads_..." prefix
        states[name[:cut]][name[cut:]] = torch.from_numpy(
            arr.reshape(shape).copy())
    if off != len(blob):
        raise DataFormatError("parameter blob length does not match schema")
    model.drp_.load_state_dict(states["drp_"])
    model.heads_.load_state_dict(states["heads_"])
    if config.get("trace") is not None:
        model.trace_ = config["trace"]
    model.classes_ = np.array([0, 1])
    return model
