import math

import numpy as np
import pytest

from causiam import adapt
from causiam.adapt import (ABLATIONS, AdaptConfig, StepReport, adapt_step, consistency_loss, ema_update,
                           high_freq_loss, init_state, run_stream, spatial_loss)
from causiam.attention import init_ca
from causiam.augment import pseudo_label_mean
from causiam.network import forward, init_backbone, pretrain
from causiam.synth import DomainStream, Pair, gen_domain_stream


@pytest.fixture(scope="module")
def zeta():
    src = gen_domain_stream("src", 8, 3, "disc", (1, 3), 32, 32)
    return pretrain([src], epochs=2, seed=1, channels=8)


def _streams(n=4, size=32):
    return [gen_domain_stream("d1", n, 5, "gaussian", (1, 3), size, size),
            gen_domain_stream("d2", n, 6, "disc", (1, 3), size, size)]


class CountingPair(Pair):
    """Pair whose ground truth logs every read."""

    def __init__(self, blurry, sharp, log):
        super().__init__(blurry, None)
        self._sharp = sharp
        self._log = log

    @property
    def sharp(self):
        self._log.append("read")
        return self._sharp

    @sharp.setter
    def sharp(self, v):
        pass


# -- losses -----------------------------------------------------------------

def test_losses_identical_inputs():
    x = np.random.default_rng(0).uniform(size=(3, 8, 8))
    assert spatial_loss(x, x) == 0 and high_freq_loss(x, x) == 0
    assert consistency_loss(x, x, 0.5) == 0


def test_hf_loss_ignores_offset():
    x = np.random.default_rng(1).uniform(size=(3, 8, 8))
    assert high_freq_loss(x, x + 0.25) < 1e-15
    assert abs(spatial_loss(x, x + 0.25) - 0.25) < 1e-15


def test_hf_loss_step_edge():
    flat = np.zeros((1, 4, 6))
    edge = flat.copy()
    edge[..., 3:] = 1.0
    # one of three band columns carries |HL| = 1, averaged over three bands
    assert abs(high_freq_loss(edge, flat) - 1 / 9) < 1e-15


def test_consistency_combines():
    rng = np.random.default_rng(2)
    a, b = rng.uniform(size=(2, 3, 6, 6))
    assert consistency_loss(a, b, 0.0) == spatial_loss(a, b)
    assert abs(consistency_loss(a, b, 0.01) - spatial_loss(a, b) - 0.01 * high_freq_loss(a, b)) < 1e-15


def test_loss_shape_mismatch():
    with pytest.raises(ValueError):
        spatial_loss(np.zeros((3, 4, 4)), np.zeros((3, 4, 5)))


# -- EMA --------------------------------------------------------------------

def test_ema_endpoints_and_default():
    xi = init_ca(4, 2, 2, seed=0, dtype=np.float64)
    th = init_ca(4, 2, 2, seed=1, dtype=np.float64)
    same = ema_update(xi, th, 0.0)
    assert all(np.array_equal(same.weights[k], xi.weights[k]) for k in xi.weights)
    full = ema_update(xi, th, 1.0)
    assert all(np.array_equal(full.weights[k], th.weights[k]) for k in xi.weights)
    z = {"w": np.zeros(5)}
    np.testing.assert_array_equal(ema_update(z, {"w": np.ones(5)}, AdaptConfig().eta)["w"], 0.9)


def test_ema_bad_eta():
    with pytest.raises(ValueError):
        ema_update({"w": np.zeros(1)}, {"w": np.zeros(1)}, 1.5)


# -- config -----------------------------------------------------------------

def test_config_validation():
    for bad in (dict(eta=-0.1), dict(K=0), dict(N=6), dict(lr=-1.0)):
        with pytest.raises(ValueError):
            AdaptConfig(**bad)


def test_ablations():
    base = AdaptConfig()
    got = {a: base.with_ablation(a) for a in ABLATIONS}
    assert not got["no-vspi"].use_ca
    assert got["no-hf"].lam == 0
    assert got["no-spatial"].spatial_weight == 0
    assert got["full-update"].full_update
    assert got["no-ema"].eta == 1.0
    with pytest.raises(ValueError):
        base.with_ablation("bogus")


# -- stepping ---------------------------------------------------------------

def test_backbone_frozen(zeta):
    cfg = AdaptConfig(lr=1e-2)
    state = init_state(zeta, cfg)
    before = {k: v.tobytes() for k, v in state.zeta.items()}
    ca0 = state.theta_ca.weights["W_Q"].copy()
    run_stream(state, cfg, _streams(2))
    assert all(state.zeta[k].tobytes() == before[k] for k in before)
    assert all(state.theta[k].tobytes() == before[k] for k in before)
    assert not np.array_equal(state.theta_ca.weights["W_Q"], ca0)


def test_full_update_moves_backbone(zeta):
    cfg = AdaptConfig(lr=1e-3).with_ablation("full-update")
    state = init_state(zeta, cfg)
    run_stream(state, cfg, _streams(1)[:1])
    assert not np.array_equal(state.theta["conv1.w"], zeta["conv1.w"])
    assert np.array_equal(state.zeta["conv1.w"], zeta["conv1.w"])


def test_deterministic(zeta):
    def go():
        cfg = AdaptConfig()
        st = init_state(zeta, cfg)
        return [r.to_json() for r in run_stream(st, cfg, _streams(2))]
    strip = lambda rows: [StepReport.from_json(r) for r in rows]  # noqa: E731
    a, b = strip(go()), strip(go())
    for r in a + b:
        r.wall_ms = 0.0
    assert a == b


def test_stream_order_and_count(zeta):
    streams = [gen_domain_stream("d1", 10, 1, "disc", (1, 2), 32, 32),
               gen_domain_stream("d2", 10, 2, "disc", (1, 2), 32, 32)]
    cfg = AdaptConfig(N=1)
    reps = run_stream(init_state(zeta, cfg), cfg, streams, rounds=3, evaluate=False)
    assert len(reps) == 60
    assert [r.domain_id for r in reps] == (["d1"] * 10 + ["d2"] * 10) * 3
    assert [r.round for r in reps] == [1] * 20 + [2] * 20 + [3] * 20
    assert [r.sample_index for r in reps[:10]] == list(range(10))


def test_single_image_stream(zeta):
    cfg = AdaptConfig()
    one = gen_domain_stream("x", 1, 0, "disc", (1, 2), 32, 32)
    assert len(run_stream(init_state(zeta, cfg), cfg, [one])) == 1


def test_stream_errors(zeta):
    cfg = AdaptConfig()
    with pytest.raises(ValueError):
        run_stream(init_state(zeta, cfg), cfg, [])
    with pytest.raises(ValueError):
        run_stream(init_state(zeta, cfg), cfg, _streams(1), rounds=0)
    with pytest.raises(ValueError):
        adapt_step(init_state(zeta, cfg), cfg, np.zeros((1, 8, 8)))


def test_ground_truth_read_only_after_step(zeta, monkeypatch):
    events = []
    real = adapt.adapt_step

    def logged(*a, **kw):
        events.append("step")
        return real(*a, **kw)

    monkeypatch.setattr(adapt, "adapt_step", logged)
    base = _streams(3)[0]
    pairs = [CountingPair(p.blurry, p.sharp, events) for p in base.pairs]
    stream = DomainStream("d", pairs)
    cfg = AdaptConfig()
    run_stream(init_state(zeta, cfg), cfg, [stream])
    assert events == ["step", "read"] * 3
    events.clear()
    run_stream(init_state(zeta, cfg), cfg, [stream], evaluate=False)
    assert events == ["step"] * 3


def test_numeric_error_rolls_back(zeta, monkeypatch):
    cfg = AdaptConfig(lr=1e-2)
    state = init_state(zeta, cfg)
    x = _streams(2)[0].pairs
    adapt_step(state, cfg, x[0].blurry, 0)
    keep = {k: v.copy() for k, v in state.theta_ca.weights.items()}
    keep_xi = {k: v.copy() for k, v in state.xi_ca.weights.items()}
    t = state.adam.t
    real = adapt.backward

    def poisoned(*a, **kw):
        g = real(*a, **kw)
        g["ca.W_Q"] = g["ca.W_Q"] * np.nan
        return g

    monkeypatch.setattr(adapt, "backward", poisoned)
    restored, rep = adapt_step(state, cfg, x[1].blurry, 1)
    assert state.numeric_errors == [1]
    assert state.adam.t == t
    assert all(np.array_equal(state.theta_ca.weights[k], keep[k]) for k in keep)
    assert all(np.array_equal(state.xi_ca.weights[k], keep_xi[k]) for k in keep_xi)
    assert math.isnan(rep.L_consistency_after)
    assert np.all(np.isfinite(restored))
    monkeypatch.setattr(adapt, "backward", real)
    adapt_step(state, cfg, x[1].blurry, 2)
    assert state.adam.t == t + 1


def test_alpha_zero_equals_plain_siamese(zeta):
    """With alpha = 0 the CA branch is inert: no gradient reaches it and the
    output is the source model's view-averaged prediction."""
    x = _streams(1)[0].pairs[0].blurry.astype(np.float32)
    cfg = AdaptConfig(alpha=0.0, lr=1e-2)
    state = init_state(zeta, cfg)
    w0 = {k: v.copy() for k, v in state.theta_ca.weights.items()}
    restored, _ = adapt_step(state, cfg, x)
    assert all(np.array_equal(state.theta_ca.weights[k], w0[k]) for k in w0)
    ref = np.clip(pseudo_label_mean(lambda v: forward(state.zeta, v)[0], x), 0, 1)
    assert np.max(np.abs(restored - ref)) <= 1e-6
    plain = AdaptConfig().with_ablation("no-vspi")
    out2, _ = adapt_step(init_state(zeta, plain), plain, x)
    assert np.max(np.abs(restored - out2)) <= 1e-6


def test_report_json_roundtrip(zeta):
    cfg = AdaptConfig()
    reps = run_stream(init_state(zeta, cfg), cfg, _streams(1)[:1])
    for r in reps:
        assert StepReport.from_json(r.to_json()) == r
    odd = StepReport(0, "a", 1, 0.1, 0.2, 0.3, math.nan, math.inf, 1.0)
    back = StepReport.from_json(odd.to_json())
    assert math.isnan(back.L_consistency_after) and back.psnr_source == math.inf


def test_report_rejects_unknown_field():
    with pytest.raises(ValueError):
        StepReport.from_json('{"sample_index": 0, "bogus": 1}')


def test_more_inner_steps_stable(zeta):
    """K = 2 stays within 0.1 dB of K = 1 on a small stream."""
    means = []
    for k in (1, 2):
        cfg = AdaptConfig(K=k)
        reps = run_stream(init_state(zeta, cfg), cfg, _streams(6, 32))
        means.append(np.mean([r.psnr_adapted for r in reps]))
    assert abs(means[0] - means[1]) <= 0.1


def test_init_state_uses_given_ca():
    zeta = init_backbone(4, seed=0)
    ca = init_ca(4, 2, 2, seed=9)
    cfg = AdaptConfig(heads=2, head_dim=2, alpha=0.3)
    st = init_state(zeta, cfg, ca)
    assert st.theta_ca.alpha == 0.3
    assert np.array_equal(st.xi_ca.weights["W_K"], ca.weights["W_K"])
    assert st.theta_ca.weights["W_K"] is not st.xi_ca.weights["W_K"]


def test_global_token_mode(zeta):
    cfg = AdaptConfig(tokens="global", lr=1e-2)
    reps = run_stream(init_state(zeta, cfg), cfg, _streams(2))
    assert all(math.isfinite(r.L_consistency) for r in reps)
    with pytest.raises(ValueError):
        AdaptConfig(tokens="clip")
