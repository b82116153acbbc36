"""Semantic prior tokens and the cross-attention fusion module.

The stand-in encoder turns an image into 49 patch tokens plus one global
token of width 512.  ``ca_forward`` lets bottleneck features (queries)
attend over those tokens (keys/values) and adds the result back,
scaled by ``alpha``:

    z' = alpha * (concat_h softmax(Q_h K_h^T / sqrt(d)) V_h) W_O + B_O) + z
"""

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict

import numpy as np

from .tensor_image import clamp01

TOKEN_DIM = 512
ENCODER_SIZE = 224
PATCH = 32
PROJECTION_SEED = 0x5E3A
TOKEN_MAGIC = b"CSTK1"
CA_NAMES = ("W_Q", "B_Q", "W_K", "B_K", "W_V", "B_V", "W_O", "B_O")


class CacheError(RuntimeError):
    """Backward called without a matching forward cache."""


@dataclass
class SemanticTokens:
    tokens: np.ndarray  # (T, 512)
    source: str = "standin"


def resize_bilinear(img, out_h, out_w):
    """Separable bilinear resize of a (C, H, W) array, half-pixel centres."""
    img = np.asarray(img, dtype=np.float64)

    def axis_weights(n_in, n_out):
        pos = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
        pos = np.clip(pos, 0, n_in - 1)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        frac = pos - lo
        return lo, hi, frac

    lo, hi, f = axis_weights(img.shape[1], out_h)
    rows = img[:, lo, :] * (1 - f)[None, :, None] + img[:, hi, :] * f[None, :, None]
    lo, hi, f = axis_weights(img.shape[2], out_w)
    return rows[:, :, lo] * (1 - f)[None, None, :] + rows[:, :, hi] * f[None, None, :]


def _projection():
    rng = np.random.default_rng(PROJECTION_SEED)
    w = rng.standard_normal((8, TOKEN_DIM)) / np.sqrt(8)
    b = rng.standard_normal(TOKEN_DIM) / np.sqrt(8)
    return w, b


def _normalize(v):
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.maximum(n, 1e-12)


def patch_statistics(img):
    """8 statistics per 32x32 patch of a 224x224 image -> (49, 8)."""
    c, h, w = img.shape
    g = h // PATCH
    p = img.reshape(c, g, PATCH, g, PATCH).transpose(1, 3, 0, 2, 4)  # (gy, gx, C, P, P)
    mean = p.mean(axis=(3, 4))
    std = p.std(axis=(3, 4))
    gx = np.mean(np.diff(p, axis=4) ** 2, axis=(2, 3, 4))
    gy = np.mean(np.diff(p, axis=3) ** 2, axis=(2, 3, 4))
    stats = np.concatenate([mean, std, gx[..., None], gy[..., None]], axis=-1)
    return stats.reshape(g * g, 8)


def encode_semantic(restored):
    """Stand-in semantic encoder: clamp, resize to 224x224, per-patch
    statistics through a fixed random affine map to 512-d, L2-normalised.
    Returns 50 tokens (49 patches + global)."""
    img = resize_bilinear(clamp01(np.asarray(restored, dtype=np.float64)), ENCODER_SIZE, ENCODER_SIZE)
    w, b = _projection()
    patches = _normalize(patch_statistics(img) @ w + b)
    glob = _normalize(patches.mean(axis=0, keepdims=True))
    return SemanticTokens(np.concatenate([patches, glob], axis=0), "standin")


def save_tokens(tokens, path):
    t = np.asarray(tokens.tokens if isinstance(tokens, SemanticTokens) else tokens, dtype="<f4")
    if t.ndim != 2 or t.shape[1] != TOKEN_DIM:
        raise ValueError(f"token array must be (T, {TOKEN_DIM}), got {t.shape}")
    with open(path, "wb") as fh:
        fh.write(TOKEN_MAGIC)
        fh.write(struct.pack("<II", t.shape[0], t.shape[1]))
        fh.write(t.tobytes())


def load_tokens(path):
    """Read externally produced embeddings (e.g. real CLIP tokens)."""
    data = Path(path).read_bytes()
    if data[:5] != TOKEN_MAGIC:
        raise ValueError(f"{path}: bad token file magic")
    n, ch = struct.unpack_from("<II", data, 5)
    if ch != TOKEN_DIM:
        raise ValueError(f"{path}: token width {ch}, expected {TOKEN_DIM}")
    payload = np.frombuffer(data, dtype="<f4", offset=13)
    if payload.size != n * ch:
        raise ValueError(f"{path}: expected {n * ch} floats, found {payload.size}")
    return SemanticTokens(payload.reshape(n, ch).astype(np.float64), "external")


@dataclass
class CaParams:
    weights: Dict[str, np.ndarray]
    alpha: float = 0.05
    heads: int = 4
    head_dim: int = 4

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        hd = self.heads * self.head_dim
        for name in ("W_Q", "W_K", "W_V"):
            if self.weights[name].shape[1] != hd:
                raise ValueError(f"{name} has width {self.weights[name].shape[1]}, expected heads*head_dim={hd}")
        if self.weights["W_O"].shape[0] != hd:
            raise ValueError(f"W_O expects {self.weights['W_O'].shape[0]} inputs, heads*head_dim={hd}")

    @property
    def channels(self):
        return self.weights["W_Q"].shape[0]

    def copy(self):
        return CaParams({k: v.copy() for k, v in self.weights.items()}, self.alpha, self.heads, self.head_dim)

    def astype(self, dtype):
        return CaParams({k: v.astype(dtype) for k, v in self.weights.items()}, self.alpha, self.heads, self.head_dim)


def init_ca(channels=16, heads=4, head_dim=4, alpha=0.05, seed=0, dtype=np.float32):
    """Q/K/V projections uniform(+-1/sqrt(fan_in)), zero biases; W_O is the
    identity when heads*head_dim == channels, otherwise seeded uniform."""
    rng = np.random.default_rng(seed)
    hd = heads * head_dim

    def uni(fan_in, shape):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, shape)

    w = {
        "W_Q": uni(channels, (channels, hd)),
        "B_Q": np.zeros(hd),
        "W_K": uni(TOKEN_DIM, (TOKEN_DIM, hd)),
        "B_K": np.zeros(hd),
        "W_V": uni(TOKEN_DIM, (TOKEN_DIM, hd)),
        "B_V": np.zeros(hd),
        "W_O": np.eye(hd) if hd == channels else uni(hd, (hd, channels)),
        "B_O": np.zeros(channels),
    }
    return CaParams({k: v.astype(dtype) for k, v in w.items()}, alpha, heads, head_dim)


def _softmax(x):
    x = x - x.max(axis=-1, keepdims=True)
    e = np.exp(x)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class CaCache:
    z: np.ndarray
    s: np.ndarray
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    attn: np.ndarray
    heads_out: np.ndarray
    shape: tuple = field(default=())


def ca_forward(z, tokens, p):
    """Fuse semantic tokens into features ``z`` of shape (C, H, W).

    Returns ``(z_prime, cache)``; ``cache.attn`` holds the (heads, H*W, T)
    attention map.
    """
    s = tokens.tokens if isinstance(tokens, SemanticTokens) else np.asarray(tokens)
    if s.ndim != 2 or s.shape[1] != TOKEN_DIM:
        raise ValueError(f"semantic tokens must be (T, {TOKEN_DIM}), got {s.shape}")
    c, h, w = z.shape
    if c != p.channels:
        raise ValueError(f"feature channels {c} do not match W_Q input {p.channels}")
    dt = z.dtype
    wt = {k: v.astype(dt, copy=False) for k, v in p.weights.items()}
    s = s.astype(dt, copy=False)
    nh, d = p.heads, p.head_dim
    zf = z.reshape(c, h * w).T
    q = (zf @ wt["W_Q"] + wt["B_Q"]).reshape(-1, nh, d).transpose(1, 0, 2)
    k = (s @ wt["W_K"] + wt["B_K"]).reshape(-1, nh, d).transpose(1, 0, 2)
    v = (s @ wt["W_V"] + wt["B_V"]).reshape(-1, nh, d).transpose(1, 0, 2)
    attn = _softmax(q @ k.transpose(0, 2, 1) / np.sqrt(d).astype(dt))
    heads_out = (attn @ v).transpose(1, 0, 2).reshape(h * w, nh * d)
    out = heads_out @ wt["W_O"] + wt["B_O"]
    zp = (dt.type(p.alpha) * out + zf).T.reshape(c, h, w)
    return zp, CaCache(zf, s, q, k, v, attn, heads_out, (c, h, w))


def ca_backward(cache, grad_zp, p):
    """Reverse mode through ``ca_forward``.

    Returns ``(grads, grad_z)`` where ``grads`` maps each of ``CA_NAMES`` to
    its gradient and ``grad_z`` is the pass-through gradient for the
    backbone features.
    """
    if cache is None:
        raise CacheError("ca_backward called without a forward cache")
    c, h, w = cache.shape
    dt = cache.z.dtype
    nh, d = p.heads, p.head_dim
    wt = {k: v.astype(dt, copy=False) for k, v in p.weights.items()}
    g = grad_zp.reshape(c, h * w).T
    gout = dt.type(p.alpha) * g
    grads = {
        "W_O": cache.heads_out.T @ gout,
        "B_O": gout.sum(axis=0),
    }
    gho = (gout @ wt["W_O"].T).reshape(-1, nh, d).transpose(1, 0, 2)
    gattn = gho @ cache.v.transpose(0, 2, 1)
    gv = cache.attn.transpose(0, 2, 1) @ gho
    glog = cache.attn * (gattn - np.sum(gattn * cache.attn, axis=-1, keepdims=True)) / np.sqrt(d).astype(dt)
    gq = glog @ cache.k
    gk = glog.transpose(0, 2, 1) @ cache.q
    gq = gq.transpose(1, 0, 2).reshape(-1, nh * d)
    gk = gk.transpose(1, 0, 2).reshape(-1, nh * d)
    gv = gv.transpose(1, 0, 2).reshape(-1, nh * d)
    grads["W_Q"] = cache.z.T @ gq
    grads["B_Q"] = gq.sum(axis=0)
    grads["W_K"] = cache.s.T @ gk
    grads["B_K"] = gk.sum(axis=0)
    grads["W_V"] = cache.s.T @ gv
    grads["B_V"] = gv.sum(axis=0)
    gz = g + gq @ wt["W_Q"].T
    return {n: grads[n] for n in CA_NAMES}, gz.T.reshape(c, h, w)
