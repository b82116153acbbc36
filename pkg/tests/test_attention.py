import numpy as np
import pytest

from causiam.attention import (CA_NAMES, CacheError, CaParams, SemanticTokens, ca_backward, ca_forward,
                               encode_semantic, init_ca, load_tokens, save_tokens)


def _dense_oracle(z, s, p):
    """Loop-per-head reference with an explicit softmax."""
    c, h, w = z.shape
    zf = z.reshape(c, -1).T
    wt = p.weights
    outs = []
    for k in range(p.heads):
        sl = slice(k * p.head_dim, (k + 1) * p.head_dim)
        q = zf @ wt["W_Q"][:, sl] + wt["B_Q"][sl]
        kk = s @ wt["W_K"][:, sl] + wt["B_K"][sl]
        v = s @ wt["W_V"][:, sl] + wt["B_V"][sl]
        logits = q @ kk.T / np.sqrt(p.head_dim)
        a = np.exp(logits - logits.max(axis=1, keepdims=True))
        a /= a.sum(axis=1, keepdims=True)
        outs.append(a @ v)
    o = np.concatenate(outs, axis=1) @ wt["W_O"] + wt["B_O"]
    return (p.alpha * o + zf).T.reshape(c, h, w)


def _perturbed(c, heads, d, seed, alpha=0.5):
    p = init_ca(c, heads, d, alpha=alpha, seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed)
    for k in p.weights:
        p.weights[k] = p.weights[k] + 0.2 * rng.standard_normal(p.weights[k].shape)
    return p


def test_constant_gray_tokens():
    t = encode_semantic(np.full((3, 64, 64), 0.4)).tokens
    assert t.shape == (50, 512)
    np.testing.assert_allclose(t, np.broadcast_to(t[0], t.shape), atol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(t, axis=1), 1.0)


def test_black_image_tokens_nonzero():
    t = encode_semantic(np.zeros((3, 32, 32))).tokens
    assert np.all(np.isfinite(t)) and np.all(np.linalg.norm(t, axis=1) > 0.99)


def test_clamp_precedes_encoding():
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 1, (3, 48, 48))
    y = x.copy()
    y[:, :4, :4] = 5.0
    x[:, :4, :4] = 1.0
    assert np.array_equal(encode_semantic(x).tokens, encode_semantic(y).tokens)


def test_tokens_golden(golden):
    np.testing.assert_allclose(encode_semantic(golden["token_input"]).tokens, golden["tokens"], atol=1e-12)


def test_token_file_roundtrip(tmp_path):
    t = encode_semantic(np.random.default_rng(1).uniform(0, 1, (3, 40, 40)))
    save_tokens(t, tmp_path / "t.bin")
    back = load_tokens(tmp_path / "t.bin")
    np.testing.assert_allclose(back.tokens, t.tokens, atol=1e-7)
    assert back.source == "external"


def test_token_file_wrong_width(tmp_path):
    import struct
    (tmp_path / "t.bin").write_bytes(b"CSTK1" + struct.pack("<II", 1, 3) + b"\0" * 12)
    with pytest.raises(ValueError):
        load_tokens(tmp_path / "t.bin")


def test_alpha_zero_exact():
    z = np.random.default_rng(2).standard_normal((16, 5, 5))
    tok = encode_semantic(np.random.default_rng(3).uniform(0, 1, (3, 32, 32)))
    zp, _ = ca_forward(z, tok, init_ca(16, alpha=0.0, dtype=np.float64))
    assert np.array_equal(zp, z)


def test_uniform_attention_when_queries_constant():
    p = _perturbed(4, 2, 2, 0)
    p.weights["W_Q"][:] = 0
    z = np.random.default_rng(4).standard_normal((4, 3, 3))
    s = np.random.default_rng(5).standard_normal((6, 512))
    p.weights["W_K"][:] = 0
    p.weights["B_K"][:] = 0
    _, cache = ca_forward(z, s, p)
    np.testing.assert_allclose(cache.attn, 1 / 6)
    assert np.allclose(cache.heads_out, cache.heads_out[0])


def test_matches_dense_oracle():
    p = _perturbed(2, 1, 2, 7)
    z = np.random.default_rng(8).standard_normal((2, 2, 2))
    s = np.random.default_rng(9).standard_normal((3, 512))
    zp, _ = ca_forward(z, s, p)
    np.testing.assert_allclose(zp, _dense_oracle(z, s, p), atol=1e-12)
    p = _perturbed(4, 2, 3, 10)
    zp, _ = ca_forward(np.ones((4, 3, 2)), s, p)
    np.testing.assert_allclose(zp, _dense_oracle(np.ones((4, 3, 2)), s, p), atol=1e-12)


def test_backward_zero_upstream():
    p = _perturbed(4, 2, 2, 1)
    z = np.random.default_rng(0).standard_normal((4, 3, 3))
    _, cache = ca_forward(z, np.random.default_rng(1).standard_normal((5, 512)), p)
    grads, gz = ca_backward(cache, np.zeros_like(z), p)
    assert not any(np.any(g) for g in grads.values()) and not np.any(gz)


def test_backward_alpha_zero():
    p = _perturbed(4, 2, 2, 1, alpha=0.0)
    z = np.random.default_rng(0).standard_normal((4, 3, 3))
    g = np.random.default_rng(2).standard_normal(z.shape)
    _, cache = ca_forward(z, np.random.default_rng(1).standard_normal((5, 512)), p)
    grads, gz = ca_backward(cache, g, p)
    assert np.array_equal(gz, g)
    assert not any(np.any(v) for v in grads.values())


def test_backward_finite_differences():
    p = _perturbed(4, 2, 2, 3, alpha=0.8)
    rng = np.random.default_rng(4)
    z = rng.standard_normal((4, 3, 3))
    s = rng.standard_normal((5, 512)) * 0.1
    g = rng.standard_normal(z.shape)
    _, cache = ca_forward(z, s, p)
    grads, gz = ca_backward(cache, g, p)
    h = 1e-5

    def f():
        return np.sum(ca_forward(z, s, p)[0] * g)

    for name in CA_NAMES:
        arr = p.weights[name]
        flat = list(np.ndindex(arr.shape))
        for i in flat[:: max(1, len(flat) // 40)]:
            o = arr[i]
            arr[i] = o + h
            fp = f()
            arr[i] = o - h
            fm = f()
            arr[i] = o
            fd = (fp - fm) / (2 * h)
            assert abs(fd - grads[name][i]) <= 1e-4 * max(abs(fd), abs(grads[name][i]), 1e-6), name
    for i in list(np.ndindex(z.shape))[::5]:
        o = z[i]
        z[i] = o + h
        fp = f()
        z[i] = o - h
        fm = f()
        z[i] = o
        fd = (fp - fm) / (2 * h)
        assert abs(fd - gz[i]) <= 1e-4 * max(abs(fd), 1e-6)


def test_backward_without_cache():
    with pytest.raises(CacheError):
        ca_backward(None, np.zeros((4, 2, 2)), init_ca(4, 2, 2))


def test_param_validation():
    w = init_ca(4, 2, 2).weights
    with pytest.raises(ValueError):
        CaParams(w, alpha=0.1, heads=3, head_dim=2)
    with pytest.raises(ValueError):
        CaParams(w, alpha=-1.0, heads=2, head_dim=2)


def test_token_width_checked():
    with pytest.raises(ValueError):
        ca_forward(np.zeros((4, 2, 2)), SemanticTokens(np.zeros((3, 10))), init_ca(4, 2, 2))


def test_attention_rows_normalised():
    p = _perturbed(4, 2, 2, 11)
    _, cache = ca_forward(np.random.default_rng(1).standard_normal((4, 3, 3)),
                          np.random.default_rng(2).standard_normal((7, 512)), p)
    np.testing.assert_allclose(cache.attn.sum(axis=-1), 1.0, atol=1e-6)


def test_positive_logit_scaling_keeps_argmax():
    p = _perturbed(4, 2, 2, 12)
    p.weights["B_K"][:] = 0
    z = np.random.default_rng(3).standard_normal((4, 3, 3))
    s = np.random.default_rng(4).standard_normal((6, 512))
    _, c1 = ca_forward(z, s, p)
    _, c2 = ca_forward(z, 3.7 * s, p)
    assert np.array_equal(c1.attn.argmax(axis=-1), c2.attn.argmax(axis=-1))


def test_single_token_is_affine():
    p = _perturbed(4, 2, 2, 13, alpha=0.6)
    z = np.random.default_rng(5).standard_normal((4, 2, 3))
    s = np.random.default_rng(6).standard_normal((1, 512))
    zp, _ = ca_forward(z, s, p)
    v = s[0] @ p.weights["W_V"] + p.weights["B_V"]
    expect = p.alpha * (v @ p.weights["W_O"] + p.weights["B_O"])
    np.testing.assert_allclose(zp, z + expect[:, None, None], atol=1e-12)
