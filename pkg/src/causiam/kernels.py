"""Backend selection for the hot loops.

The Cython extension ``_ckernels`` is used when it imports; otherwise the
numpy versions in ``_pykernels`` take over.  Setting ``CAUSIAM_PURE=1`` in
the environment forces the numpy path.  ``BACKEND`` names whichever won.

Padding (reflect, as numpy's ``mode="reflect"``) happens here so the
backends only handle in-bounds gathers.
"""

import os

import numpy as np

from . import _pykernels

if os.environ.get("CAUSIAM_PURE", "") not in ("", "0"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"


def get_backend(name=None):
    """Kernel module for ``name`` ("cython" or "python"); None -> default."""
    if name is None:
        return _impl
    if not isinstance(name, str):
        return name
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels
        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")


def reflect_pad(x, pad):
    """Reflect-pad the last two axes of a (C, H, W) array."""
    return np.ascontiguousarray(np.pad(x, ((0, 0), (pad, pad), (pad, pad)), mode="reflect"))


def reflect_pad_adjoint(gpad, pad=1):
    """Transpose of ``reflect_pad``: fold the border gradient back inside."""
    g = gpad.copy()
    h, w = g.shape[1] - 2 * pad, g.shape[2] - 2 * pad
    for k in range(1, pad + 1):
        g[:, pad + k, :] += g[:, pad - k, :]
        g[:, pad + h - 1 - k, :] += g[:, pad + h - 1 + k, :]
    g = g[:, pad:pad + h, :]
    for k in range(1, pad + 1):
        g[:, :, pad + k] += g[:, :, pad - k]
        g[:, :, pad + w - 1 - k] += g[:, :, pad + w - 1 + k]
    return np.ascontiguousarray(g[:, :, pad:pad + w])


def conv3x3(x, w, b, impl=None):
    """Resolution-preserving 3x3 convolution with reflect padding 1.

    x: (Cin, H, W); w: (Cout, Cin, 3, 3); b: (Cout,).  Returns (Cout, H, W)
    in the dtype of ``x``.
    """
    impl = get_backend(impl)
    if x.shape[0] != w.shape[1]:
        raise ValueError(f"channel mismatch: input has {x.shape[0]}, kernel expects {w.shape[1]}")
    dt = x.dtype
    xpad = reflect_pad(x, 1)
    return impl.conv3x3_forward(xpad, np.ascontiguousarray(w, dtype=dt), np.ascontiguousarray(b, dtype=dt))


def conv3x3_grad(x, w, g, need_wgrad=True, impl=None):
    """Gradients of ``conv3x3`` w.r.t. its input, weight and bias."""
    impl = get_backend(impl)
    dt = x.dtype
    xpad = reflect_pad(x, 1)
    gxpad, gw, gb = impl.conv3x3_backward(
        xpad, np.ascontiguousarray(w, dtype=dt), np.ascontiguousarray(g, dtype=dt), need_wgrad)
    return reflect_pad_adjoint(gxpad, 1), gw, gb


def psf_gather(x, bank, half, kid, impl=None):
    """Per-pixel kernel selection: output pixel (y, x) uses kernel
    ``bank[kid[y, x]]`` centred on itself (gather form)."""
    impl = get_backend(impl)
    pad = (bank.shape[1] - 1) // 2
    xpad = reflect_pad(np.asarray(x, dtype=np.float64), pad)
    return impl.psf_gather(xpad, np.ascontiguousarray(bank, dtype=np.float64),
                           np.ascontiguousarray(half, dtype=np.int64),
                           np.ascontiguousarray(kid, dtype=np.int64))
