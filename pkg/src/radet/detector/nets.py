"""Torch modules: conditional perturbation generator, frozen image encoder, heads.

Everything runs in float64 on CPU: the scale is small, determinism matters
more than speed, and finite-difference gradient checks need the headroom.
"""
from __future__ import annotations

import hashlib

import numpy as np
import torch
import torch.nn as nn

from ..errors import ConfigurationError, NumericError

DTYPE = torch.float64


def to_tensor(imgs: np.ndarray) -> torch.Tensor:
    """NxHxWxC [0,1] numpy -> NCHW float64 tensor."""
    imgs = np.asarray(imgs, dtype=float)
    if imgs.ndim == 3:
        imgs = imgs[None]
    return torch.from_numpy(np.ascontiguousarray(imgs.transpose(0, 3, 1, 2)))


def to_numpy(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().numpy().transpose(0, 2, 3, 1)


class DrpNet(nn.Module):
    """Bounded perturbation generator: 2-stage encoder-decoder with skips.

    The clean embedding conditions the bottleneck by channel concatenation of
    a projected, spatially broadcast embedding map.  The output passes through
    tanh and is scaled by eps_pix, so the sup-norm budget holds by construction.
    """

    def __init__(self, channels: int = 3, width: int = 8, emb_dim: int = 32,
                 eps_pix: float = 8.0 / 255.0, image_hw: int = 32):
        super().__init__()
        if eps_pix <= 0:
            raise ConfigurationError("eps_pix must be positive")
        self.eps_pix = float(eps_pix)
        w = width
        self.down1 = nn.Conv2d(channels, w, 3, padding=1)
        self.down2 = nn.Conv2d(w, 2 * w, 3, padding=1)
        self.pool = nn.AvgPool2d(2)
        self.embed_proj = nn.Linear(emb_dim, 2 * w)
        self.bottleneck = nn.Conv2d(4 * w, 2 * w, 3, padding=1)
        self.up1 = nn.Conv2d(4 * w, w, 3, padding=1)       # cat with down2 skip
        self.up2 = nn.Conv2d(2 * w, w, 3, padding=1)       # cat with down1 skip
        self.out = nn.Conv2d(w, channels, 3, padding=1)
        # Fixed high-frequency probe pattern added before the squash.  The
        # zero perturbation is a stationary point of the similarity
        # objective, so training starts from an active probe and learns to
        # suppress or keep it per input instead of escaping a flat region.
        ii, jj = np.meshgrid(np.arange(image_hw), np.arange(image_hw),
                             indexing="ij")
        checker = torch.from_numpy(1.2 * (-1.0) ** (ii + jj))
        self.register_buffer("base_pattern",
                             checker[None, None, :, :].to(DTYPE))
        self.to(DTYPE)

    def forward(self, x: torch.Tensor, embedding: torch.Tensor) -> torch.Tensor:
        if embedding.shape[-1] != self.embed_proj.in_features:
            raise ConfigurationError(
                f"conditioning dim {embedding.shape[-1]} != "
                f"{self.embed_proj.in_features}")
        h1 = torch.tanh(self.down1(x))              # N,w,H,W
        h2 = torch.tanh(self.down2(self.pool(h1)))  # N,2w,H/2,W/2
        hb = self.pool(h2)                          # N,2w,H/4,W/4
        cond = self.embed_proj(embedding)[:, :, None, None].expand(
            -1, -1, hb.shape[2], hb.shape[3])
        hb = torch.tanh(self.bottleneck(torch.cat([hb, cond], dim=1)))
        u1 = nn.functional.interpolate(hb, scale_factor=2, mode="nearest")
        u1 = torch.tanh(self.up1(torch.cat([u1, h2], dim=1)))
        u2 = nn.functional.interpolate(u1, scale_factor=2, mode="nearest")
        u2 = torch.tanh(self.up2(torch.cat([u2, h1], dim=1)))
        return self.eps_pix * torch.tanh(self.out(u2)
                                         + self.base_pattern)


class FrozenImageEncoder(nn.Module):
    """Fixed random-feature conv encoder (the detector never updates it).

    Plays the role of the frozen foundation backbone at desk scale: seeded
    random filters, tanh nonlinearities, global pooling into a compact
    embedding.  The first channels pool low-frequency content; the final
    block responds to fine texture, so perturbation responses are frequency
    sensitive.
    """

    def __init__(self, channels: int = 3, emb_dim: int = 32, seed: int = 0,
                 image_hw: int = 32, gain: float = 1.5, hp_gain: float = 3.0):
        super().__init__()
        if emb_dim < 4 or emb_dim % 2:
            raise ConfigurationError("emb_dim must be even and >= 4")
        self.emb_dim = emb_dim
        self.seed = seed
        self.gain = gain
        self.hp_gain = hp_gain
        hp_dim = emb_dim // 2
        self.conv1 = nn.Conv2d(channels, 16, 3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(16, 32, 3, stride=2, padding=1)
        self.conv3 = nn.Conv2d(32, 32, 3, stride=2, padding=1)
        hw = image_hw // 8
        self.proj = nn.Linear(32 * hw * hw, emb_dim - hp_dim)
        self.to(DTYPE)
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for name, p in self.named_parameters():
                p.copy_(torch.randn(p.shape, generator=gen, dtype=DTYPE)
                        / np.sqrt(max(1, p.shape[-1] if p.ndim <= 2
                                      else p[0].numel())))
                if name.startswith("conv"):
                    p.mul_(gain)  # sensitivity headroom for the probe
        # Linear high-pass bank: checkerboard-modulated random envelopes.
        # Natural content is weak at the Nyquist frequency, so these
        # coordinates respond far more to fine perturbations than to the
        # image itself -- a compact stand-in for a foundation encoder's
        # high-sensitivity subspace.
        ii, jj = np.meshgrid(np.arange(image_hw), np.arange(image_hw),
                             indexing="ij")
        checker = torch.from_numpy(((-1.0) ** (ii + jj)))
        env = 0.3 + torch.rand((hp_dim, channels, image_hw, image_hw),
                               generator=gen, dtype=DTYPE)
        w = env * checker
        w = w / w.reshape(hp_dim, -1).norm(dim=1)[:, None, None, None]
        self.register_buffer("hp_bank", hp_gain * w)
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = torch.tanh(self.conv1(x))
        h = torch.tanh(self.conv2(h))
        h = torch.tanh(self.conv3(h))
        e_sem = self.proj(h.reshape(h.shape[0], -1))
        e_hp = torch.einsum("nchw,dchw->nd", x, self.hp_bank)
        e = torch.cat([e_sem, e_hp], dim=1)
        if not torch.isfinite(e).all():
            raise NumericError("non-finite embedding from frozen encoder")
        return e

    def param_hash(self) -> str:
        h = hashlib.sha256()
        for name, p in sorted(self.state_dict().items()):
            h.update(name.encode())
            h.update(p.detach().cpu().numpy().tobytes())
        return h.hexdigest()


class Heads(nn.Module):
    """Four evidence branches mapping features to logits.

    sem: affine embedding -> logit; dist: 2-layer perceptron on the scalar
    embedding distance; diff: 2-layer perceptron on the difference vector;
    res: 3-conv CNN with pooling and an affine readout on the residual image.
    """

    BRANCHES = ("sem", "dist", "diff", "res")

    def __init__(self, emb_dim: int = 32, channels: int = 3,
                 branches=BRANCHES, learned_weights: bool = False):
        super().__init__()
        unknown = set(branches) - set(self.BRANCHES)
        if unknown or not branches:
            raise ConfigurationError(f"bad branch selection {tuple(branches)}")
        self.branches = tuple(b for b in self.BRANCHES if b in branches)
        self.sem = nn.Linear(emb_dim, 1)
        self.dist = nn.Sequential(nn.Linear(1, 8), nn.Tanh(), nn.Linear(8, 1))
        self.diff = nn.Sequential(nn.Linear(emb_dim, 16), nn.Tanh(),
                                  nn.Linear(16, 1))
        self.res_conv = nn.Sequential(
            nn.Conv2d(channels, 8, 3, padding=1), nn.Tanh(), nn.AvgPool2d(2),
            nn.Conv2d(8, 8, 3, padding=1), nn.Tanh(), nn.AvgPool2d(2),
            nn.Conv2d(8, 8, 3, padding=1), nn.Tanh(),
            nn.AdaptiveAvgPool2d(1))
        self.res_out = nn.Linear(8, 1)
        if learned_weights:
            self.agg_weights = nn.Parameter(
                torch.ones(len(self.branches), dtype=DTYPE))
        else:
            self.register_buffer("agg_weights",
                                 torch.ones(len(self.branches), dtype=DTYPE))
        self.to(DTYPE)

    def branch_logits(self, e: torch.Tensor, e2: torch.Tensor,
                      r: torch.Tensor) -> dict:
        d = torch.linalg.vector_norm(e - e2, dim=1, keepdim=True)
        out = {}
        if "sem" in self.branches:
            out["sem"] = self.sem(e).reshape(-1)
        if "dist" in self.branches:
            out["dist"] = self.dist(d).reshape(-1)
        if "diff" in self.branches:
            out["diff"] = self.diff(e - e2).reshape(-1)
        if "res" in self.branches:
            out["res"] = self.res_out(
                self.res_conv(r).reshape(r.shape[0], -1)).reshape(-1)
        for name, v in out.items():
            if not torch.isfinite(v).all():
                raise NumericError(f"non-finite logit from branch {name!r}")
        return out

    def aggregate(self, logits: dict) -> torch.Tensor:
        stacked = torch.stack([logits[b] for b in self.branches], dim=0)
        return (self.agg_weights[:, None] * stacked).sum(dim=0)

    def forward(self, e, e2, r):
        return self.aggregate(self.branch_logits(e, e2, r))
