"""Deterministic image degradations: Gaussian blur and JPEG-style quantization."""
from __future__ import annotations

import numpy as np
from scipy.fft import dctn, idctn
from scipy.ndimage import correlate1d

from .errors import ConfigurationError

# Standard JPEG luminance quantization table (Annex K).
JPEG_LUMA_TABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99]], dtype=float)


def _as_batch(img):
    img = np.asarray(img, dtype=float)
    squeeze_c = img.ndim == 2
    if squeeze_c:
        img = img[:, :, None]
    squeeze_n = img.ndim == 3
    if squeeze_n:
        img = img[None]
    return img, squeeze_n, squeeze_c


def _restore(img, squeeze_n, squeeze_c):
    if squeeze_n:
        img = img[0]
    if squeeze_c:
        img = img[..., 0]
    return img


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur, kernel radius ceil(3 sigma), edge replication."""
    if sigma <= 0:
        raise ConfigurationError("blur sigma must be positive")
    img, sn, sc = _as_batch(img)
    radius = int(np.ceil(3.0 * sigma))
    t = np.arange(-radius, radius + 1, dtype=float)
    kernel = np.exp(-0.5 * (t / sigma) ** 2)
    kernel /= kernel.sum()
    out = correlate1d(img, kernel, axis=1, mode="nearest")
    out = correlate1d(out, kernel, axis=2, mode="nearest")
    return _restore(np.clip(out, 0.0, 1.0), sn, sc)


def _quant_table(qf: float) -> np.ndarray:
    if not 1 <= qf <= 100:
        raise ConfigurationError("quality factor must be in [1, 100]")
    scale = (200.0 - 2.0 * qf) / 100.0 if qf >= 50 else 5000.0 / qf / 100.0
    return np.maximum(np.round(JPEG_LUMA_TABLE * scale), 1.0)


def jpeg_like(img: np.ndarray, qf: float) -> np.ndarray:
    """JPEG-style per-channel 8x8 DCT quantization (not a bitstream codec)."""
    img, sn, sc = _as_batch(img)
    q = _quant_table(qf)
    n, h, w, c = img.shape
    pad_h, pad_w = (-h) % 8, (-w) % 8
    x = np.pad(img, ((0, 0), (0, pad_h), (0, pad_w), (0, 0)), mode="edge")
    x = x * 255.0 - 128.0
    hh, ww = x.shape[1] // 8, x.shape[2] // 8
    blocks = x.transpose(0, 3, 1, 2).reshape(n, c, hh, 8, ww, 8)
    blocks = blocks.transpose(0, 1, 2, 4, 3, 5)
    coef = dctn(blocks, axes=(-2, -1), norm="ortho", type=2)
    coef = np.round(coef / q) * q
    rec = idctn(coef, axes=(-2, -1), norm="ortho", type=2)
    rec = rec.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, hh * 8, ww * 8)
    rec = rec.transpose(0, 2, 3, 1)[:, :h, :w, :]
    return _restore(np.clip((rec + 128.0) / 255.0, 0.0, 1.0), sn, sc)
