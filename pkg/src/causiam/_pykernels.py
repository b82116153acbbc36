"""Pure-numpy versions of the compiled kernels in ``_ckernels.pyx``.

Same signatures, same semantics; used when the extension is not built or
when ``CAUSIAM_PURE=1`` is set.
"""

import numpy as np


def _im2col(xpad, h, w):
    cin = xpad.shape[0]
    cols = np.empty((cin, 9, h, w), dtype=xpad.dtype)
    for ky in range(3):
        for kx in range(3):
            cols[:, ky * 3 + kx] = xpad[:, ky:ky + h, kx:kx + w]
    return cols.reshape(cin * 9, h * w)


def conv3x3_forward(xpad, w, b):
    h, wd = xpad.shape[1] - 2, xpad.shape[2] - 2
    cout = w.shape[0]
    cols = _im2col(xpad, h, wd)
    out = w.reshape(cout, -1) @ cols
    out += b[:, None]
    return out.reshape(cout, h, wd)


def conv3x3_backward(xpad, w, g, need_wgrad):
    cin = xpad.shape[0]
    cout, h, wd = g.shape
    g2 = g.reshape(cout, h * wd)
    gcols = (w.reshape(cout, -1).T @ g2).reshape(cin, 9, h, wd)
    gx = np.zeros((cin, h + 2, wd + 2), dtype=g.dtype)
    for ky in range(3):
        for kx in range(3):
            gx[:, ky:ky + h, kx:kx + wd] += gcols[:, ky * 3 + kx]
    if not need_wgrad:
        return gx, None, None
    cols = _im2col(xpad, h, wd)
    gw = (g2 @ cols.T).reshape(w.shape)
    gb = g2.sum(axis=1)
    return gx, gw, gb


def psf_gather(xpad, bank, half, kid):
    pad = (bank.shape[1] - 1) // 2
    c = xpad.shape[0]
    h, w = xpad.shape[1] - 2 * pad, xpad.shape[2] - 2 * pad
    out = np.zeros((c, h, w), dtype=np.float64)
    for k in np.unique(kid):
        r = int(half[k])
        acc = np.zeros((c, h, w), dtype=np.float64)
        for dy in range(-r, r + 1):
            for dx in range(-r, r + 1):
                kv = bank[k, pad + dy, pad + dx]
                if kv != 0.0:
                    acc += kv * xpad[:, pad + dy:pad + dy + h, pad + dx:pad + dx + w]
        mask = kid == k
        out[:, mask] = acc[:, mask]
    return out
