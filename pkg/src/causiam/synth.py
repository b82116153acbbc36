"""Synthetic sharp/defocused pairs under two lens models.

Lens A blurs with a uniform disc, lens B with an isotropic Gaussian of
sigma = radius / 2.  Both use a piecewise-constant radius map (a few
seeded "depth" regions) so blur varies across the frame.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional

import numpy as np

from . import kernels


class PsfKind(str, Enum):
    DISC = "disc"
    GAUSSIAN = "gaussian"


@dataclass
class PsfModel:
    kind: PsfKind
    radius_map: np.ndarray  # (H, W) blur radius in pixels

    def __post_init__(self):
        self.kind = PsfKind(self.kind)
        self.radius_map = np.asarray(self.radius_map, dtype=np.float64)
        if np.any(self.radius_map < 0):
            raise ValueError("blur radius must be non-negative")


@dataclass
class Pair:
    blurry: np.ndarray
    sharp: Optional[np.ndarray] = None


@dataclass
class DomainStream:
    domain_id: str
    pairs: List[Pair]
    seed: int = 0
    psf_kind: Optional[PsfKind] = None
    radii: List[List[float]] = field(default_factory=list)

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def __getitem__(self, i):
        return self.pairs[i]


def _hsv_palette(rng, n):
    h = rng.uniform(0, 1, n)
    s = rng.uniform(0.3, 1.0, n)
    v = rng.uniform(0.2, 1.0, n)
    i = np.floor(h * 6).astype(int) % 6
    f = h * 6 - np.floor(h * 6)
    p, q, t = v * (1 - s), v * (1 - f * s), v * (1 - (1 - f) * s)
    table = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)]
    out = np.empty((n, 3))
    for k in range(n):
        out[k] = [c[k] for c in table[i[k]]]
    return out


def gen_sharp(seed, h=64, w=64):
    """Deterministic procedural scene with broadband content."""
    if h < 32 or w < 32:
        raise ValueError(f"image must be at least 32x32, got {h}x{w}")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    c0, c1 = _hsv_palette(rng, 2)
    theta = rng.uniform(0, 2 * np.pi)
    ramp = (np.cos(theta) * xx / w + np.sin(theta) * yy / h)
    ramp = (ramp - ramp.min()) / max(ramp.max() - ramp.min(), 1e-12)
    img = c0[:, None, None] * (1 - ramp) + c1[:, None, None] * ramp

    n_shapes = rng.integers(6, 12)
    kinds = rng.integers(0, 4, n_shapes)
    colors = _hsv_palette(rng, n_shapes)
    for kind, col in zip(kinds, colors):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        size = rng.uniform(0.08, 0.3) * min(h, w)
        if kind == 0:  # rectangle
            ar = rng.uniform(0.5, 2.0)
            mask = (np.abs(yy - cy) < size * ar / 2) & (np.abs(xx - cx) < size / ar / 2)
            img[:, mask] = col[:, None]
        elif kind == 1:  # disc
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 < size ** 2
            img[:, mask] = col[:, None]
        elif kind == 2:  # checkerboard patch
            period = rng.integers(2, 7)
            mask = (np.abs(yy - cy) < size) & (np.abs(xx - cx) < size)
            chk = ((yy // period + xx // period) % 2).astype(bool)
            alt = 1.0 - col
            img[:, mask & chk] = col[:, None]
            img[:, mask & ~chk] = alt[:, None]
        else:  # oriented line texture
            period = rng.uniform(2.5, 8.0)
            phi = rng.uniform(0, np.pi)
            stripes = 0.5 + 0.5 * np.sin(2 * np.pi * (np.cos(phi) * xx + np.sin(phi) * yy) / period)
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 < (1.3 * size) ** 2
            img[:, mask] = (col[:, None] * stripes[mask][None, :]
                            + (1 - col[:, None]) * (1 - stripes[mask][None, :]))
    return np.clip(img, 0.0, 1.0)


def _kernel(kind, r):
    if r <= 0:
        return np.ones((1, 1)), 0
    if kind is PsfKind.DISC:
        half = int(np.floor(r))
        d = np.arange(-half, half + 1)
        k = (d[:, None] ** 2 + d[None, :] ** 2 <= r * r).astype(np.float64)
    else:
        sigma = r / 2.0
        half = int(np.ceil(3 * sigma))
        d = np.arange(-half, half + 1)
        k = np.exp(-(d[:, None] ** 2 + d[None, :] ** 2) / (2 * sigma * sigma))
    return k / k.sum(), half


def psf_kernel(kind, radius):
    """Normalized kernel for a single radius (disc or Gaussian)."""
    return _kernel(PsfKind(kind), float(radius))[0]


def apply_psf(sharp, psf, clamp=True):
    """Spatially varying blur: each output pixel uses the kernel of its own
    radius, with reflect padding at the borders."""
    sharp = np.asarray(sharp, dtype=np.float64)
    h, w = sharp.shape[1:]
    rmap = psf.radius_map
    if rmap.shape != (h, w):
        raise ValueError(f"radius map {rmap.shape} does not match image {(h, w)}")
    if rmap.max(initial=0) > min(h, w) / 2:
        raise ValueError(f"blur radius {rmap.max()} exceeds half the image size {min(h, w) / 2}")
    radii, kid = np.unique(rmap, return_inverse=True)
    kid = kid.reshape(h, w)
    kerns = [_kernel(psf.kind, r) for r in radii]
    pad = max(half for _, half in kerns)
    bank = np.zeros((len(kerns), 2 * pad + 1, 2 * pad + 1))
    half = np.zeros(len(kerns), dtype=np.int64)
    for i, (k, hk) in enumerate(kerns):
        bank[i, pad - hk:pad + hk + 1, pad - hk:pad + hk + 1] = k
        half[i] = hk
    if pad == 0:
        out = sharp * bank[kid][None, :, :, 0, 0]
    else:
        out = kernels.psf_gather(sharp, bank, half, kid)
    return np.clip(out, 0.0, 1.0) if clamp else out


def region_radius_map(rng, h, w, radius_range):
    """2-4 Voronoi regions, each with a radius drawn from ``radius_range``."""
    lo, hi = radius_range
    n = int(rng.integers(2, 5))
    cy = rng.uniform(0, h, n)
    cx = rng.uniform(0, w, n)
    radii = np.round(rng.uniform(lo, hi, n), 2)
    yy, xx = np.mgrid[0:h, 0:w]
    dist = (yy[None] - cy[:, None, None]) ** 2 + (xx[None] - cx[:, None, None]) ** 2
    labels = np.argmin(dist, axis=0)
    return radii[labels], radii.tolist()


def gen_domain_stream(domain_id, n, seed, psf_kind, radius_range, h=64, w=64):
    """``n`` (blurry, sharp) pairs; image i of a stream depends only on
    (seed, i), so two kinds at the same seed share their sharp images."""
    if n < 1:
        raise ValueError("stream needs at least one image")
    radius_range = tuple(radius_range)
    if len(radius_range) != 2 or radius_range[0] > radius_range[1] or radius_range[0] < 0:
        raise ValueError(f"invalid radius range {radius_range}")
    kind = PsfKind(psf_kind)
    pairs, radii = [], []
    for i in range(n):
        ss = np.random.SeedSequence([seed, i])
        scene_seed, blur_seed = ss.spawn(2)
        sharp = gen_sharp(np.random.default_rng(scene_seed), h, w)
        rmap, rs = region_radius_map(np.random.default_rng(blur_seed), h, w, radius_range)
        pairs.append(Pair(apply_psf(sharp, PsfModel(kind, rmap)), sharp))
        radii.append(rs)
    return DomainStream(domain_id, pairs, seed, kind, radii)
