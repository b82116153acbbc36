"""Shared oracles for the test suite."""

import numpy as np

from causiam.adapt import AdaptConfig, init_state, run_stream
from causiam.attention import CA_NAMES, encode_semantic, init_ca
from causiam.metrics import psnr
from causiam.network import forward, backward, init_backbone, pretrain
from causiam.synth import PsfKind, gen_domain_stream

KINK_MARGIN = 2e-3


def gradcheck_config(seed, channels=4, size=6, n_tokens=5):
    """Perturbed double-precision backbone + CA, an input, a target.

    The perturbation moves every parameter off its structured init so
    that zero biases or an identity W_O cannot hide a wrong gradient.
    """
    rng = np.random.default_rng(seed)
    p = {k: v.astype(np.float64) for k, v in init_backbone(channels, seed=seed, out_scale=1.0).items()}
    for k in p:
        p[k] = p[k] + 0.05 * rng.standard_normal(p[k].shape)
    ca = init_ca(channels, 2, channels // 2, alpha=0.7, seed=seed, dtype=np.float64)
    for k in ca.weights:
        ca.weights[k] = ca.weights[k] + 0.3 * rng.standard_normal(ca.weights[k].shape)
    x = rng.uniform(0.2, 0.8, (3, size, size))
    tok = encode_semantic(rng.uniform(0, 1, (3, 40, 40)))
    tok.tokens = tok.tokens[:n_tokens]
    tgt = rng.uniform(0, 1, (3, size, size))
    return p, ca, x, tok, tgt


def kink_distance(p, ca, x, tok):
    """How far the forward pass sits from any ReLU or clamp switch point.

    Configurations where some layer is almost entirely switched off are
    reported as distance 0: they would pass the check with zero gradients.
    """
    _, _, c = forward(p, x, ca, tok)
    live = min((c.a1 > 0).mean(), (c.a2 > 0).mean(), (c.a3 > 0).mean(), ((c.pre > 0) & (c.pre < 1)).mean())
    if live < 0.2:
        return 0.0
    return min(np.abs(c.a1).min(), np.abs(c.a2).min(), np.abs(c.a3).min(),
               np.abs(c.pre).min(), np.abs(c.pre - 1).min())


def smooth_seeds(count, start=0):
    """First ``count`` seeds whose configuration is at least KINK_MARGIN
    away from every non-differentiable point (so h=1e-4 never crosses one)."""
    out, seed = [], start
    while len(out) < count:
        if kink_distance(*gradcheck_config(seed)[:4]) >= KINK_MARGIN:
            out.append(seed)
        seed += 1
    return out


def finite_difference_errors(seed, h=1e-4):
    """Worst relative error per parameter name for loss 0.5 * |y - t|^2."""
    p, ca, x, tok, tgt = gradcheck_config(seed)

    def loss():
        r, _, _ = forward(p, x, ca, tok)
        return 0.5 * np.sum((r - tgt) ** 2)

    r, _, cache = forward(p, x, ca, tok)
    grads = backward(p, cache, r - tgt, ca)
    worst = {}
    for name in list(p) + [f"ca.{n}" for n in CA_NAMES]:
        arr = p[name] if name in p else ca.weights[name[3:]]
        err = 0.0
        for i in np.ndindex(arr.shape):
            orig = arr[i]
            arr[i] = orig + h
            lp = loss()
            arr[i] = orig - h
            lm = loss()
            arr[i] = orig
            fd = (lp - lm) / (2 * h)
            an = grads[name][i]
            err = max(err, abs(fd - an) / max(abs(fd), abs(an), 1e-6))
        worst[name] = err
    return worst


# -- desk-scale adaptation experiment --------------------------------------

DESK = dict(size=64, source_n=200, source_seed=11, gauss_n=100, gauss_seed=13,
            test_n=50, test_seed=12, radius=(1.0, 4.0), epochs=5, pretrain_seed=1)


def desk_streams(scale=1.0):
    d = DESK
    n = lambda k: max(2, int(round(d[k] * scale)))  # noqa: E731
    src = gen_domain_stream("discA", n("source_n"), d["source_seed"], PsfKind.DISC, d["radius"], d["size"], d["size"])
    gauss = gen_domain_stream("gaussB", n("gauss_n"), d["gauss_seed"], PsfKind.GAUSSIAN, d["radius"], d["size"], d["size"])
    test = gen_domain_stream("discA-test", n("test_n"), d["test_seed"], PsfKind.DISC, d["radius"], d["size"], d["size"])
    return src, gauss, test


def desk_pretrain(src, epochs=None):
    return pretrain([src], DESK["epochs"] if epochs is None else epochs, DESK["pretrain_seed"])


def run_desk(zeta, streams, cfg=None, rounds=1):
    cfg = cfg or AdaptConfig()
    state = init_state(zeta, cfg)
    return run_stream(state, cfg, streams, rounds=rounds)


def per_domain_round(reports, field="psnr_adapted"):
    out = {}
    for r in reports:
        out.setdefault((r.domain_id, r.round), []).append(getattr(r, field))
    return {k: float(np.mean(v)) for k, v in out.items()}


def source_psnr(zeta, stream):
    return float(np.mean([psnr(forward(zeta, p.blurry.astype(np.float32))[0], p.sharp) for p in stream.pairs]))
