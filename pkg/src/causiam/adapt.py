"""Siamese continual test-time adaptation.

Per test image:

1. semantic tokens from the frozen source model's restoration;
2. pseudo label = offline model averaged over five invertible views;
3. one Adam step on the online model's CA parameters against
   L = L_spatial + lambda * L_hf;
4. offline <- (1 - eta) * offline + eta * online.

Steps 2-4 repeat ``K`` times.  The reported restoration is the last pseudo
label.  Backbones stay frozen unless ``full_update`` is set.
"""

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Optional

import numpy as np

from .attention import CaParams, SemanticTokens, encode_semantic, init_ca
from .augment import AUGMENT_OPS, pseudo_label_mean
from .haar import high_freq_avg, high_freq_avg_grad
from .metrics import psnr, ssim
from .network import CONV_LAYERS, AdamState, NumericError, adam_step, backward, copy_params, forward

log = logging.getLogger(__name__)

ABLATIONS = ("no-vspi", "no-hf", "no-spatial", "full-update", "no-ema")
TOKEN_MODES = ("patches", "global")


@dataclass
class AdaptConfig:
    alpha: float = 0.05
    eta: float = 0.9
    lam: float = 0.01
    lr: float = 1e-4
    K: int = 1
    N: int = 5
    spatial_weight: float = 1.0
    use_ca: bool = True
    full_update: bool = False
    heads: int = 4
    head_dim: int = 4
    ca_seed: int = 0
    tokens: str = "patches"  # or "global": the single pooled token only

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        if not 1 <= self.N <= len(AUGMENT_OPS):
            raise ValueError(f"N must be between 1 and {len(AUGMENT_OPS)}, got {self.N}")
        for name in ("alpha", "lam", "lr", "spatial_weight"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.heads < 1 or self.head_dim < 1:
            raise ValueError("heads and head_dim must be positive")
        if self.tokens not in TOKEN_MODES:
            raise ValueError(f"tokens must be one of {', '.join(TOKEN_MODES)}, got {self.tokens!r}")

    def with_ablation(self, name):
        """Copy of this config with one ablation switched on."""
        kw = asdict(self)
        if name == "no-vspi":
            kw["use_ca"] = False
        elif name == "no-hf":
            kw["lam"] = 0.0
        elif name == "no-spatial":
            kw["spatial_weight"] = 0.0
        elif name == "full-update":
            kw["full_update"] = True
        elif name == "no-ema":
            kw["eta"] = 1.0
        elif name not in (None, "", "full"):
            raise ValueError(f"unknown ablation {name!r}; choose from {', '.join(ABLATIONS)}")
        return AdaptConfig(**kw)


@dataclass
class StepReport:
    sample_index: int
    domain_id: str
    round: int
    L_spatial: float
    L_hf: float
    L_consistency: float
    L_consistency_after: float = math.nan
    psnr_source: Optional[float] = None
    psnr_adapted: Optional[float] = None
    ssim_source: Optional[float] = None
    ssim_adapted: Optional[float] = None
    wall_ms: float = 0.0

    def to_json(self):
        def enc(v):
            if isinstance(v, float) and (math.isinf(v) or math.isnan(v)):
                return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
            return v
        return json.dumps({k: enc(v) for k, v in asdict(self).items()}, sort_keys=False)

    @classmethod
    def from_json(cls, line):
        raw = json.loads(line)
        if not isinstance(raw, dict):
            raise ValueError("report line is not a JSON object")
        names = {f.name for f in fields(cls)}
        unknown = set(raw) - names
        if unknown:
            raise ValueError(f"unknown report fields {sorted(unknown)}")
        kw = {}
        for k, v in raw.items():
            if v in ("inf", "-inf", "nan"):
                v = float(v)
            kw[k] = v
        return cls(**kw)


@dataclass
class ModelState:
    zeta: Dict[str, np.ndarray]
    theta: Dict[str, np.ndarray]
    xi: Dict[str, np.ndarray]
    theta_ca: Optional[CaParams]
    xi_ca: Optional[CaParams]
    adam: AdamState
    numeric_errors: List[int] = field(default_factory=list)
    last_source: Optional[np.ndarray] = None
    samples_seen: int = 0


def init_state(zeta, cfg, ca=None):
    """Online and offline models both start from the source backbone and the
    same CA initialisation (``ca`` if given, else seeded from ``cfg``)."""
    zeta = {k: np.asarray(v, dtype=np.float32) for k, v in zeta.items()}
    channels = zeta["conv2.w"].shape[0]
    theta_ca = xi_ca = None
    if cfg.use_ca:
        if ca is None:
            ca = init_ca(channels, cfg.heads, cfg.head_dim, cfg.alpha, cfg.ca_seed)
        else:
            ca = ca.astype(np.float32)
            ca.alpha = cfg.alpha
        theta_ca, xi_ca = ca.copy(), ca.copy()
    if cfg.full_update:
        theta, xi = copy_params(zeta), copy_params(zeta)
    else:
        theta = xi = zeta
    return ModelState(zeta, theta, xi, theta_ca, xi_ca, AdamState(lr=cfg.lr))


def spatial_loss(theta_out, y_mean):
    """Mean absolute difference."""
    a = np.asarray(theta_out, dtype=np.float64)
    b = np.asarray(y_mean, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a - b)))


def high_freq_loss(theta_out, y_mean):
    """Mean absolute difference of the averaged Haar detail bands."""
    a = np.asarray(theta_out, dtype=np.float64)
    b = np.asarray(y_mean, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(high_freq_avg(a) - high_freq_avg(b))))


def consistency_loss(theta_out, y_mean, lam, spatial_weight=1.0):
    return spatial_weight * spatial_loss(theta_out, y_mean) + lam * high_freq_loss(theta_out, y_mean)


def _loss_and_grad(out, y_mean, cfg):
    a = np.asarray(out, dtype=np.float64)
    b = np.asarray(y_mean, dtype=np.float64)
    d = a - b
    ls = float(np.mean(np.abs(d)))
    hd = high_freq_avg(a) - high_freq_avg(b)
    lh = float(np.mean(np.abs(hd)))
    total = cfg.spatial_weight * ls + cfg.lam * lh
    grad = cfg.spatial_weight * np.sign(d) / d.size
    if cfg.lam:
        grad = grad + cfg.lam * high_freq_avg_grad(np.sign(hd) / hd.size, d.shape[-2:])
    return ls, lh, total, grad


def ema_update(xi, theta, eta):
    """xi <- (1 - eta) * xi + eta * theta, elementwise.

    Works on ``CaParams`` or on plain dicts of arrays; returns a new object.
    """
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must lie in [0, 1], got {eta}")
    if isinstance(xi, CaParams):
        return CaParams(ema_update(xi.weights, theta.weights, eta), xi.alpha, xi.heads, xi.head_dim)
    out = {}
    for k, v in xi.items():
        t = theta[k]
        if t.shape != v.shape:
            raise ValueError(f"shape mismatch for {k}: {v.shape} vs {t.shape}")
        out[k] = ((1 - eta) * v + eta * t).astype(v.dtype)
    return out


def _trainable(state, cfg):
    p = {}
    if state.theta_ca is not None:
        p.update({f"ca.{k}": v for k, v in state.theta_ca.weights.items()})
    if cfg.full_update:
        p.update(state.theta)
    return p


def _tokens(source_out, cfg):
    t = encode_semantic(source_out)
    if cfg.tokens == "global":
        # softmax over one key is constant: attention reduces to an affine map of it
        t = SemanticTokens(t.tokens[-1:], t.source)
    return t


def _online(state, x, tokens):
    return forward(state.theta, x, state.theta_ca, tokens)


def adapt_step(state, cfg, x_test, sample_index=0, domain_id="", round_=1, executor=None):
    """Adapt on one unlabeled image; returns ``(restored, report)``.

    On a non-finite loss or gradient the step is abandoned, the pre-step
    parameters are kept, and the sample index is appended to
    ``state.numeric_errors``.
    """
    t0 = time.perf_counter()
    x = np.asarray(x_test, dtype=np.float32)
    if x.ndim != 3 or x.shape[0] != 3:
        raise ValueError(f"expected (3, H, W) image, got {x.shape}")
    source_out = forward(state.zeta, x)[0]
    state.last_source = source_out
    tokens = _tokens(source_out, cfg) if cfg.use_ca else None
    ops = AUGMENT_OPS[:cfg.N]
    wrt = ("ca",) + (CONV_LAYERS if cfg.full_update else ())
    snapshot = (state.theta, state.xi, state.theta_ca, state.xi_ca,
                state.adam.t, dict(state.adam.m), dict(state.adam.v))
    first = None
    after = math.nan
    y_mean = None
    try:
        for _ in range(cfg.K):
            y_mean = pseudo_label_mean(lambda v: forward(state.xi, v, state.xi_ca, tokens)[0], x, ops, executor)
            out, _, cache = _online(state, x, tokens)
            ls, lh, total, grad = _loss_and_grad(out, y_mean, cfg)
            if not math.isfinite(total):
                raise NumericError("non-finite consistency loss", sample_index)
            if first is None:
                first = (ls, lh, total)
            params = _trainable(state, cfg)
            if params:
                grads = backward(state.theta, cache, grad, state.theta_ca, wrt=wrt)
                new = adam_step(state.adam, params, {k: grads[k] for k in params}, sample_index)
                if state.theta_ca is not None:
                    state.theta_ca = CaParams({k: new[f"ca.{k}"] for k in state.theta_ca.weights},
                                              state.theta_ca.alpha, state.theta_ca.heads, state.theta_ca.head_dim)
                if cfg.full_update:
                    state.theta = {k: new[k] for k in state.theta}
            after = _loss_and_grad(_online(state, x, tokens)[0], y_mean, cfg)[2]
            if state.xi_ca is not None:
                state.xi_ca = ema_update(state.xi_ca, state.theta_ca, cfg.eta)
            if cfg.full_update:
                state.xi = ema_update(state.xi, state.theta, cfg.eta)
    except NumericError as exc:
        (state.theta, state.xi, state.theta_ca, state.xi_ca,
         state.adam.t, state.adam.m, state.adam.v) = snapshot
        state.numeric_errors.append(sample_index)
        log.warning("skipping update: %s", exc)
        if y_mean is None:
            y_mean = source_out
        first = first or (math.nan, math.nan, math.nan)
        after = math.nan
    state.samples_seen += 1
    restored = np.clip(y_mean, 0.0, 1.0)
    report = StepReport(sample_index, domain_id, round_, first[0], first[1], first[2], after,
                        wall_ms=(time.perf_counter() - t0) * 1e3)
    return restored, report


def score(report, restored, source_out, sharp):
    """Fill the metric fields of ``report`` against ground truth."""
    report.psnr_source = psnr(source_out, sharp)
    report.psnr_adapted = psnr(restored, sharp)
    report.ssim_source = ssim(source_out, sharp)
    report.ssim_adapted = ssim(restored, sharp)
    return report


def run_stream(state, cfg, streams, rounds=1, evaluate=True, on_step=None, executor=None):
    """Process every domain in order, ``rounds`` times, never resetting.

    Ground truth (when present) is read only after a sample's step has
    finished, to fill in metrics.  ``on_step(report, restored)`` is called
    after each image.
    """
    if not streams:
        raise ValueError("no domain streams given")
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    reports = []
    for rnd in range(1, rounds + 1):
        for stream in streams:
            for i, pair in enumerate(stream.pairs):
                restored, rep = adapt_step(state, cfg, pair.blurry, i, stream.domain_id, rnd, executor)
                if evaluate:
                    sharp = pair.sharp
                    if sharp is not None:
                        score(rep, restored, state.last_source, sharp)
                reports.append(rep)
                if on_step is not None:
                    on_step(rep, restored)
    return reports
