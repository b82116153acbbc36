"""Toy residual deblurring backbone, its reverse mode, Adam and pretraining.

Architecture (all 3x3, stride 1, reflect padding 1):

    z  = relu(conv2(relu(conv1(x))))          bottleneck features
    z' = ca_forward(z, tokens) or z           optional semantic fusion
    y  = clamp(x + conv4(relu(conv3(z'))), 0, 1)

Parameters live in a plain dict keyed ``conv1.w``, ``conv1.b`` ... ``conv4.b``.
"""

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict

import numpy as np

from .attention import CaParams, ca_backward, ca_forward
from .kernels import conv3x3, conv3x3_grad

log = logging.getLogger(__name__)

CONV_LAYERS = ("conv1", "conv2", "conv3", "conv4")
CHECKPOINT_MAGIC = b"CSWT1"


class NumericError(ArithmeticError):
    """Non-finite values met during a step; ``sample_index`` says where."""

    def __init__(self, msg, sample_index=None):
        super().__init__(msg if sample_index is None else f"{msg} (sample {sample_index})")
        self.sample_index = sample_index


def init_backbone(channels=16, seed=0, dtype=np.float32, out_scale=0.1):
    """Uniform(+-1/sqrt(fan_in)) kernels and zero biases.  The last layer is
    shrunk by ``out_scale`` so the untrained net starts near identity."""
    rng = np.random.default_rng(seed)
    shapes = {"conv1": (channels, 3), "conv2": (channels, channels),
              "conv3": (channels, channels), "conv4": (3, channels)}
    params = {}
    for name, (cout, cin) in shapes.items():
        bound = 1.0 / np.sqrt(cin * 9)
        w = rng.uniform(-bound, bound, (cout, cin, 3, 3))
        if name == "conv4":
            w *= out_scale
        params[f"{name}.w"] = w.astype(dtype)
        params[f"{name}.b"] = np.zeros(cout, dtype=dtype)
    return params


def copy_params(params):
    return {k: v.copy() for k, v in params.items()}


@dataclass
class ForwardCache:
    x: np.ndarray
    a1: np.ndarray
    h1: np.ndarray
    a2: np.ndarray
    z: np.ndarray
    zp: np.ndarray
    a3: np.ndarray
    h3: np.ndarray
    pre: np.ndarray
    ca_cache: object = None


def forward(params, x, ca=None, tokens=None):
    """Run the backbone on a (3, H, W) image.

    Returns ``(restored, z, cache)`` where ``z`` is the bottleneck feature
    (after CA fusion when ``ca`` is given).  Computation happens in the
    dtype of ``x``.
    """
    if ca is not None and tokens is None:
        raise ValueError("CA module requires semantic tokens")
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[0] != params["conv1.w"].shape[1]:
        raise ValueError(f"input of shape {x.shape} does not match conv1 ({params['conv1.w'].shape[1]} channels)")
    a1 = conv3x3(x, params["conv1.w"], params["conv1.b"])
    h1 = np.maximum(a1, 0)
    a2 = conv3x3(h1, params["conv2.w"], params["conv2.b"])
    z = np.maximum(a2, 0)
    ca_cache = None
    if ca is not None:
        zp, ca_cache = ca_forward(z, tokens, ca)
    else:
        zp = z
    a3 = conv3x3(zp, params["conv3.w"], params["conv3.b"])
    h3 = np.maximum(a3, 0)
    pre = x + conv3x3(h3, params["conv4.w"], params["conv4.b"])
    restored = np.clip(pre, 0, 1)
    return restored, zp, ForwardCache(x, a1, h1, a2, z, zp, a3, h3, pre, ca_cache)


def backward(params, cache, grad_restored, ca=None, wrt=CONV_LAYERS + ("ca",)):
    """Exact gradients of a scalar loss given d loss / d restored.

    ``wrt`` names the parameter groups to materialise (any of the conv
    layers and ``"ca"``); input gradients are only propagated as deep as the
    deepest requested group.  The clamp passes gradient where the
    pre-clamp value lies in [0, 1], boundaries included.
    """
    if cache is None:
        raise RuntimeError("backward called without a forward cache")
    wrt = set(wrt)
    if "ca" in wrt and ca is None:
        wrt.discard("ca")
    grads = {}
    g = grad_restored * ((cache.pre >= 0) & (cache.pre <= 1))
    g = g.astype(cache.x.dtype, copy=False)

    deep = {"conv1", "conv2", "ca"} & wrt
    need_in = bool(deep or "conv3" in wrt)
    gh3, gw, gb = conv3x3_grad(cache.h3, params["conv4.w"], g, need_wgrad="conv4" in wrt)
    if "conv4" in wrt:
        grads["conv4.w"], grads["conv4.b"] = gw, gb
    if not need_in:
        return grads
    ga3 = gh3 * (cache.a3 > 0)
    gzp, gw, gb = conv3x3_grad(cache.zp, params["conv3.w"], ga3, need_wgrad="conv3" in wrt)
    if "conv3" in wrt:
        grads["conv3.w"], grads["conv3.b"] = gw, gb
    if not deep:
        return grads
    if ca is not None and cache.ca_cache is not None:
        gca, gz = ca_backward(cache.ca_cache, gzp, ca)
        if "ca" in wrt:
            grads.update({f"ca.{k}": v for k, v in gca.items()})
    else:
        gz = gzp
    if not ({"conv1", "conv2"} & wrt):
        return grads
    ga2 = gz * (cache.a2 > 0)
    gh1, gw, gb = conv3x3_grad(cache.h1, params["conv2.w"], ga2, need_wgrad="conv2" in wrt)
    if "conv2" in wrt:
        grads["conv2.w"], grads["conv2.b"] = gw, gb
    if "conv1" in wrt:
        ga1 = gh1 * (cache.a1 > 0)
        _, gw, gb = conv3x3_grad(cache.x, params["conv1.w"], ga1, need_wgrad=True)
        grads["conv1.w"], grads["conv1.b"] = gw, gb
    return grads


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state, params, grads, sample_index=None):
    """Bias-corrected Adam over the keys of ``grads``; returns a new dict
    (untouched keys are shared with ``params``).  Non-finite gradients
    raise ``NumericError`` before any state changes."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}", sample_index)
        if g.shape != params[name].shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {params[name].shape} for {name}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1 ** state.t
    c2 = 1 - b2 ** state.t
    out = dict(params)
    for name, g in grads.items():
        p = params[name]
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        state.m[name], state.v[name] = m.astype(p.dtype), v.astype(p.dtype)
        upd = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        out[name] = (p - upd).astype(p.dtype)
    return out


def l1_loss_grad(pred, target):
    diff = pred - target
    return float(np.mean(np.abs(diff, dtype=np.float64))), np.sign(diff) / diff.size


def pretrain(streams, epochs=5, seed=1, lr=1e-3, channels=16, on_epoch=None):
    """Supervised L1 training of the backbone on (blurry, sharp) pairs.

    Deterministic for a given seed.  ``on_epoch(epoch, mean_l1)`` is called
    after each epoch.  Returns the float32 parameter dict.
    """
    pairs = [p for s in streams for p in s.pairs]
    if any(p.sharp is None for p in pairs):
        raise ValueError("pretraining needs sharp ground truth for every pair")
    if not pairs and epochs > 0:
        raise ValueError("no training pairs")
    params = init_backbone(channels, seed)
    state = AdamState(lr=lr)
    rng = np.random.default_rng(seed)
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(pairs))
        total = 0.0
        for i in order:
            x = pairs[i].blurry.astype(np.float32)
            y = pairs[i].sharp.astype(np.float32)
            restored, _, cache = forward(params, x)
            loss, g = l1_loss_grad(restored, y)
            if not np.isfinite(loss):
                raise NumericError("pretraining loss diverged", int(i))
            grads = backward(params, cache, g, wrt=CONV_LAYERS)
            params = adam_step(state, params, grads, sample_index=int(i))
            total += loss
        mean = total / len(pairs)
        log.info("epoch %d mean L1 %.6f", epoch, mean)
        if on_epoch is not None:
            on_epoch(epoch, mean)
    return params


def save_checkpoint(path, tensors):
    """Write named tensors as CSWT1 records (little-endian float32)."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        for name, arr in tensors.items():
            arr = np.asarray(arr, dtype="<f4")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr).tobytes())


def load_checkpoint(path):
    data = Path(path).read_bytes()
    if data[:5] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a CSWT1 checkpoint")
    pos = 5
    out = {}
    try:
        while pos < len(data):
            (n,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", data, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            count = int(np.prod(shape, dtype=np.int64))
            arr = np.frombuffer(data, dtype="<f4", count=count, offset=pos)
            pos += 4 * count
            out[name] = arr.reshape(shape).astype(np.float32)
    except struct.error as exc:
        raise ValueError(f"{path}: truncated checkpoint") from exc
    return out


def split_checkpoint(tensors, alpha=0.05, heads=4, head_dim=4):
    """Separate backbone tensors from ``ca.*`` tensors."""
    backbone = {k: v for k, v in tensors.items() if not k.startswith("ca.")}
    ca_w = {k[3:]: v for k, v in tensors.items() if k.startswith("ca.")}
    ca = CaParams(ca_w, alpha, heads, head_dim) if ca_w else None
    return backbone, ca
