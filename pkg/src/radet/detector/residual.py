"""High-frequency residual extraction via 3x3 median filtering."""
from __future__ import annotations

import numpy as np
from scipy.ndimage import median_filter

from ..errors import DomainError


def median_residual(img: np.ndarray) -> np.ndarray:
    """r = x - median3(x) per channel; borders handled by edge replication.

    Accepts HxW, HxWxC, or a batch NxHxWxC; the filter never mixes channels.
    """
    img = np.asarray(img, dtype=float)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    batched = img.ndim == 4
    if not batched:
        img = img[None]
    if img.shape[1] < 3 or img.shape[2] < 3:
        raise DomainError("median_residual needs height and width >= 3")
    filt = median_filter(img, size=(1, 3, 3, 1), mode="nearest")
    out = img - filt
    if not batched:
        out = out[0]
    if squeeze:
        out = out[:, :, 0]
    return out
