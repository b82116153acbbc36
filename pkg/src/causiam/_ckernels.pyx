# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops: 3x3 convolution (forward/backward) and the
spatially varying PSF gather.  Padding is done by the caller so these
routines only ever see in-bounds indices."""

import numpy as np
cimport numpy as cnp
from cython cimport floating

cnp.import_array()


def conv3x3_forward(floating[:, :, ::1] xpad, floating[:, :, :, ::1] w,
                    floating[::1] b):
    cdef Py_ssize_t cin = xpad.shape[0]
    cdef Py_ssize_t h = xpad.shape[1] - 2
    cdef Py_ssize_t wd = xpad.shape[2] - 2
    cdef Py_ssize_t cout = w.shape[0]
    cdef Py_ssize_t o, i, ky, kx, y, x
    cdef floating wv
    dtype = np.float64 if floating is double else np.float32
    out_arr = np.empty((cout, h, wd), dtype=dtype)
    cdef floating[:, :, ::1] out = out_arr
    for o in range(cout):
        for y in range(h):
            for x in range(wd):
                out[o, y, x] = b[o]
        for i in range(cin):
            for ky in range(3):
                for kx in range(3):
                    wv = w[o, i, ky, kx]
                    for y in range(h):
                        for x in range(wd):
                            out[o, y, x] += wv * xpad[i, y + ky, x + kx]
    return out_arr


def conv3x3_backward(floating[:, :, ::1] xpad, floating[:, :, :, ::1] w,
                     floating[:, :, ::1] g, bint need_wgrad):
    """Returns (grad_xpad, grad_w, grad_b); weight grads are None when
    need_wgrad is false."""
    cdef Py_ssize_t cin = xpad.shape[0]
    cdef Py_ssize_t h = g.shape[1]
    cdef Py_ssize_t wd = g.shape[2]
    cdef Py_ssize_t cout = w.shape[0]
    cdef Py_ssize_t o, i, ky, kx, y, x
    cdef floating wv, acc
    dtype = np.float64 if floating is double else np.float32
    gx_arr = np.zeros((cin, h + 2, wd + 2), dtype=dtype)
    cdef floating[:, :, ::1] gx = gx_arr
    cdef floating[:, :, :, ::1] gw
    cdef floating[::1] gb
    gw_arr = None
    gb_arr = None
    if need_wgrad:
        gw_arr = np.zeros((cout, cin, 3, 3), dtype=dtype)
        gb_arr = np.zeros(cout, dtype=dtype)
        gw = gw_arr
        gb = gb_arr
    for o in range(cout):
        if need_wgrad:
            acc = 0
            for y in range(h):
                for x in range(wd):
                    acc = acc + g[o, y, x]
            gb[o] = acc
        for i in range(cin):
            for ky in range(3):
                for kx in range(3):
                    wv = w[o, i, ky, kx]
                    for y in range(h):
                        for x in range(wd):
                            gx[i, y + ky, x + kx] += wv * g[o, y, x]
                    if need_wgrad:
                        acc = 0
                        for y in range(h):
                            for x in range(wd):
                                acc = acc + g[o, y, x] * xpad[i, y + ky, x + kx]
                        gw[o, i, ky, kx] = acc
    return gx_arr, gw_arr, gb_arr


def psf_gather(double[:, :, ::1] xpad, double[:, :, ::1] bank,
               long[::1] half, long[:, ::1] kid):
    """out[c, y, x] = sum_k bank[kid[y,x]][k] * xpad[c, y+pad+dy, x+pad+dx]
    over the kernel's own support; pad = (bank.shape[1] - 1) // 2."""
    cdef Py_ssize_t c = xpad.shape[0]
    cdef Py_ssize_t pad = (bank.shape[1] - 1) // 2
    cdef Py_ssize_t h = xpad.shape[1] - 2 * pad
    cdef Py_ssize_t wd = xpad.shape[2] - 2 * pad
    cdef Py_ssize_t ch, y, x, dy, dx, k, r
    cdef double acc, kv
    out_arr = np.empty((c, h, wd), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    for ch in range(c):
        for y in range(h):
            for x in range(wd):
                k = kid[y, x]
                r = half[k]
                acc = 0.0
                for dy in range(-r, r + 1):
                    for dx in range(-r, r + 1):
                        kv = bank[k, pad + dy, pad + dx]
                        if kv != 0.0:
                            acc = acc + kv * xpad[ch, y + pad + dy, x + pad + dx]
                out[ch, y, x] = acc
    return out_arr
