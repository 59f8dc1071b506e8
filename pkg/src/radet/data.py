"""Desk-scale image task: textured 'real' images vs tiny-decoder 'fake' images.

Real images are correlated-noise textures with a natural-like 1/f power
spectrum.  Fake images come from a fixed-weight two-layer transposed-conv
decoder whose latents interpolate a stored bank of training latents with
memorization weight lam_img, mirroring the testbed's memorization knob at the
image level.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
import torch

from .errors import ConfigurationError, DataFormatError

_LATENT_DIM = 16
_DECODER_SEED = 1234  # fixed: the decoder is part of the task definition


@dataclass(frozen=True)
class ToyTaskConfig:
    lam_img: float = 0.9
    image_hw: int = 32
    channels: int = 3
    n_train: int = 2000          # per class
    n_test: int = 500            # per class
    seed: int = 0
    spectrum_alpha: float = 1.2  # real-texture spectral decay
    noise_std: float = 0.04      # shared pixel noise (task hardness knob)
    fake_texture_mix: float = 0.0  # blend real-style texture into fakes
    latent_bank: int = 64        # stored training latents for memorization

    def __post_init__(self):
        if not 0.0 <= self.lam_img <= 1.0:
            raise ConfigurationError("lam_img must be in [0, 1]")
        if self.image_hw < 8 or self.image_hw % 8:
            raise ConfigurationError("image_hw must be a multiple of 8, >= 8")
        if self.n_train < 2 or self.n_test < 2:
            raise ConfigurationError("need at least 2 images per class per split")


class _FakeDecoder:
    """Fixed two-layer transposed-conv decoder, weights seeded once."""

    def __init__(self, hw: int, channels: int):
        gen = torch.Generator().manual_seed(_DECODER_SEED)
        self.hw = hw
        base = hw // 4
        self.base = base
        self.lin = torch.randn(8 * base * base, _LATENT_DIM,
                               generator=gen, dtype=torch.float64) / 4.0
        self.deconv1 = torch.nn.ConvTranspose2d(8, 8, 4, stride=2, padding=1,
                                                bias=True)
        self.deconv2 = torch.nn.ConvTranspose2d(8, channels, 4, stride=2,
                                                padding=1, bias=True)
        for mod in (self.deconv1, self.deconv2):
            mod.to(torch.float64)
            with torch.no_grad():
                for p in mod.parameters():
                    p.copy_(torch.randn(p.shape, generator=gen,
                                        dtype=torch.float64) / 3.0)
            for p in mod.parameters():
                p.requires_grad_(False)

    def __call__(self, z: np.ndarray) -> np.ndarray:
        zt = torch.from_numpy(np.asarray(z, dtype=float))
        h = (zt @ self.lin.T).reshape(-1, 8, self.base, self.base)
        h = torch.tanh(self.deconv1(torch.tanh(h)))
        out = torch.sigmoid(self.deconv2(h))
        return out.numpy().transpose(0, 2, 3, 1)


def _real_images(k: int, hw: int, channels: int, alpha: float,
                 rng: np.random.Generator) -> np.ndarray:
    fx = np.fft.fftfreq(hw)[:, None]
    fy = np.fft.fftfreq(hw)[None, :]
    radius = np.sqrt(fx ** 2 + fy ** 2)
    amp = 1.0 / (radius + 1.0 / hw) ** alpha
    spec = (rng.standard_normal((k, channels, hw, hw))
            + 1j * rng.standard_normal((k, channels, hw, hw))) * amp
    img = np.fft.ifft2(spec, axes=(2, 3)).real
    img -= img.mean(axis=(2, 3), keepdims=True)
    img /= img.std(axis=(2, 3), keepdims=True) + 1e-12
    # Per-image brightness/contrast jitter, then squash into [0,1].
    gain = rng.uniform(0.5, 1.0, size=(k, 1, 1, 1))
    offset = rng.uniform(-0.3, 0.3, size=(k, 1, 1, 1))
    img = 1.0 / (1.0 + np.exp(-(gain * img + offset)))
    return img.transpose(0, 2, 3, 1)


@dataclass(frozen=True)
class ToyImageDataset:
    config: ToyTaskConfig
    train_images: np.ndarray   # (2*n_train, H, W, C) in [0,1]
    train_labels: np.ndarray   # 1 = real, 0 = fake
    test_images: np.ndarray
    test_labels: np.ndarray

    def save(self, path):
        np.savez_compressed(
            path, train_images=self.train_images, train_labels=self.train_labels,
            test_images=self.test_images, test_labels=self.test_labels,
            config=np.frombuffer(
                json.dumps(asdict(self.config)).encode(), dtype=np.uint8))

    @staticmethod
    def load(path) -> "ToyImageDataset":
        try:
            z = np.load(path)
            cfg = ToyTaskConfig(**json.loads(bytes(z["config"]).decode()))
            return ToyImageDataset(config=cfg,
                                   train_images=z["train_images"],
                                   train_labels=z["train_labels"],
                                   test_images=z["test_images"],
                                   test_labels=z["test_labels"])
        except (KeyError, OSError, ValueError, TypeError) as exc:
            raise DataFormatError(f"bad dataset file {path}: {exc}") from exc


def make_toy_dataset(cfg: ToyTaskConfig) -> ToyImageDataset:
    rng = np.random.default_rng(cfg.seed)
    decoder = _FakeDecoder(cfg.image_hw, cfg.channels)
    bank = rng.standard_normal((cfg.latent_bank, _LATENT_DIM))

    def fakes(k: int) -> np.ndarray:
        fresh = rng.standard_normal((k, _LATENT_DIM))
        anchor = bank[rng.integers(0, cfg.latent_bank, size=k)]
        z = cfg.lam_img * anchor + (1.0 - cfg.lam_img) * fresh
        out = decoder(z)
        if cfg.fake_texture_mix > 0.0:
            tex = _real_images(k, cfg.image_hw, cfg.channels,
                               cfg.spectrum_alpha, rng)
            out = (1.0 - cfg.fake_texture_mix) * out \
                + cfg.fake_texture_mix * tex
        return out

    def build(n: int):
        imgs = np.concatenate([
            _real_images(n, cfg.image_hw, cfg.channels, cfg.spectrum_alpha, rng),
            fakes(n)])
        labels = np.concatenate([np.ones(n, dtype=int), np.zeros(n, dtype=int)])
        if cfg.noise_std > 0:
            imgs = imgs + cfg.noise_std * rng.standard_normal(imgs.shape)
        imgs = np.clip(imgs, 0.0, 1.0)
        perm = rng.permutation(2 * n)
        return imgs[perm], labels[perm]

    train_images, train_labels = build(cfg.n_train)
    test_images, test_labels = build(cfg.n_test)
    return ToyImageDataset(config=cfg, train_images=train_images,
                           train_labels=train_labels, test_images=test_images,
                           test_labels=test_labels)
