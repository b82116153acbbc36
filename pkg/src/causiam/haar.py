"""One-level orthonormal 2D Haar transform and the high-frequency operator.

For each 2x2 block with top row (a, b) and bottom row (c, d):

    LL = (a + b + c + d) / 2      LH = (a + b - c - d) / 2
    HL = (a - b + c - d) / 2      HH = (a - b - c + d) / 2

Odd heights/widths are reflect-padded by one row/column at the bottom/right
and cropped again by ``idwt2``.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np


@dataclass
class WaveletBands:
    LL: np.ndarray
    LH: np.ndarray
    HL: np.ndarray
    HH: np.ndarray
    shape: Tuple[int, ...]  # spatial shape of the transformed input, before padding

    def energy(self):
        return sum(float(np.sum(b.astype(np.float64) ** 2)) for b in (self.LL, self.LH, self.HL, self.HH))


def _pad_even(img):
    h, w = img.shape[-2:]
    ph, pw = h % 2, w % 2
    if ph or pw:
        if (ph and h < 2) or (pw and w < 2):
            raise ValueError(f"cannot reflect-pad a dimension of size 1: {img.shape}")
        pads = [(0, 0)] * (img.ndim - 2) + [(0, ph), (0, pw)]
        img = np.pad(img, pads, mode="reflect")
    return img


def dwt2(img):
    img = np.asarray(img)
    if img.size == 0 or img.ndim < 2:
        raise ValueError(f"dwt2 needs a non-empty (..., H, W) array, got shape {img.shape}")
    shape = img.shape[-2:]
    x = _pad_even(img)
    a = x[..., 0::2, 0::2]
    b = x[..., 0::2, 1::2]
    c = x[..., 1::2, 0::2]
    d = x[..., 1::2, 1::2]
    return WaveletBands(
        LL=(a + b + c + d) / 2,
        LH=(a + b - c - d) / 2,
        HL=(a - b + c - d) / 2,
        HH=(a - b - c + d) / 2,
        shape=tuple(shape),
    )


def _idwt2_padded(LL, LH, HL, HH):
    shapes = {LL.shape, LH.shape, HL.shape, HH.shape}
    if len(shapes) != 1:
        raise ValueError(f"inconsistent band shapes: {sorted(shapes)}")
    lead = LL.shape[:-2]
    h2, w2 = LL.shape[-2:]
    out = np.empty(lead + (2 * h2, 2 * w2), dtype=np.result_type(LL, LH, HL, HH))
    out[..., 0::2, 0::2] = (LL + LH + HL + HH) / 2
    out[..., 0::2, 1::2] = (LL + LH - HL - HH) / 2
    out[..., 1::2, 0::2] = (LL - LH + HL - HH) / 2
    out[..., 1::2, 1::2] = (LL - LH - HL + HH) / 2
    return out


def idwt2(bands):
    out = _idwt2_padded(bands.LL, bands.LH, bands.HL, bands.HH)
    h, w = bands.shape
    if out.shape[-2] - h not in (0, 1) or out.shape[-1] - w not in (0, 1):
        raise ValueError(f"band shape {bands.LL.shape} incompatible with recorded size {bands.shape}")
    return out[..., :h, :w]


def high_freq_avg(img):
    """(LH + HL + HH) / 3 -- the detail bands averaged, shape (..., H/2, W/2)."""
    bands = dwt2(img)
    return (bands.LH + bands.HL + bands.HH) / 3


def high_freq_avg_grad(grad, shape):
    """Adjoint of ``high_freq_avg`` for an input of spatial ``shape``.

    The Haar matrix is orthonormal, so its transpose is ``idwt2``; the
    reflect padding of odd sizes is folded back onto the mirrored row/col.
    """
    g3 = grad / 3
    full = _idwt2_padded(np.zeros_like(grad), g3, g3, g3)
    h, w = shape
    if full.shape[-2] > h:
        full[..., h - 2, :] += full[..., h, :]
    full = full[..., :h, :]
    if full.shape[-1] > w:
        full[..., :, w - 2] += full[..., :, w]
    return full[..., :, :w]
