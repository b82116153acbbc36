"""Compiled and numpy backends must agree."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from causiam import kernels

needs_c = pytest.mark.skipif(kernels.BACKEND != "cython", reason="compiled core not built")


def _naive_conv(x, w, b):
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)), mode="reflect")
    h, wd = x.shape[1:]
    out = np.zeros((w.shape[0], h, wd))
    for o in range(w.shape[0]):
        for i in range(h):
            for j in range(wd):
                out[o, i, j] = np.sum(xp[:, i:i + 3, j:j + 3] * w[o]) + b[o]
    return out


@pytest.mark.parametrize("impl", ["python", pytest.param("cython", marks=needs_c)])
def test_conv_matches_naive(impl):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((3, 5, 6))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    np.testing.assert_allclose(kernels.conv3x3(x, w, b, impl=impl), _naive_conv(x, w, b), atol=1e-12)


@needs_c
@settings(max_examples=25, deadline=None)
@given(cin=st.integers(1, 4), cout=st.integers(1, 4), h=st.integers(2, 9), w=st.integers(2, 9),
       seed=st.integers(0, 2 ** 16))
def test_backends_agree(cin, cout, h, w, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((cin, h, w))
    wt = rng.standard_normal((cout, cin, 3, 3))
    b = rng.standard_normal(cout)
    g = rng.standard_normal((cout, h, w))
    np.testing.assert_allclose(kernels.conv3x3(x, wt, b, impl="cython"),
                               kernels.conv3x3(x, wt, b, impl="python"), atol=1e-12)
    for a, c in zip(kernels.conv3x3_grad(x, wt, g, impl="cython"), kernels.conv3x3_grad(x, wt, g, impl="python")):
        np.testing.assert_allclose(a, c, atol=1e-11)


def test_conv_grad_is_adjoint():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 6, 5))
    w = rng.standard_normal((3, 2, 3, 3))
    g = rng.standard_normal((3, 6, 5))
    gx, gw, gb = kernels.conv3x3_grad(x, w, g)
    zero = np.zeros(3)
    # <conv(x), g> is linear in x and in w separately
    assert np.isclose(np.sum(kernels.conv3x3(x, w, zero) * g), np.sum(gx * x))
    assert np.isclose(np.sum(kernels.conv3x3(x, w, zero) * g), np.sum(gw * w))
    np.testing.assert_allclose(gb, g.sum(axis=(1, 2)))


def test_reflect_pad_adjoint():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((2, 5, 4))
    y = rng.standard_normal((2, 7, 6))
    assert np.isclose(np.sum(kernels.reflect_pad(x, 1) * y), np.sum(x * kernels.reflect_pad_adjoint(y, 1)))


def test_channel_mismatch():
    with pytest.raises(ValueError):
        kernels.conv3x3(np.zeros((2, 4, 4)), np.zeros((1, 3, 3, 3)), np.zeros(1))


@needs_c
def test_psf_gather_backends_agree():
    rng = np.random.default_rng(5)
    x = rng.uniform(0, 1, (3, 12, 10))
    bank = rng.uniform(0, 1, (2, 5, 5))
    half = np.array([1, 2], dtype=np.int64)
    kid = rng.integers(0, 2, (12, 10)).astype(np.int64)
    np.testing.assert_allclose(kernels.psf_gather(x, bank, half, kid, impl="cython"),
                               kernels.psf_gather(x, bank, half, kid, impl="python"), atol=1e-13)


def test_float32_stays_float32():
    x = np.ones((3, 4, 4), np.float32)
    w = np.ones((2, 3, 3, 3), np.float32)
    assert kernels.conv3x3(x, w, np.zeros(2, np.float32)).dtype == np.float32
