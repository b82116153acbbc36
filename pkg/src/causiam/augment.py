"""Invertible geometric views and the averaged pseudo label.

All five ops are pixel permutations on the last two axes of a (..., H, W)
array, so ``invert(op, apply(op, x))`` is exact.
"""

from enum import Enum

import numpy as np


class AugmentOp(str, Enum):
    HFLIP = "hflip"
    VFLIP = "vflip"
    ROT90 = "rot90"
    ROT180 = "rot180"
    ROT270 = "rot270"


# the five non-identity ops, in the fixed reduction order
AUGMENT_OPS = (AugmentOp.HFLIP, AugmentOp.VFLIP, AugmentOp.ROT90, AugmentOp.ROT180, AugmentOp.ROT270)

_INVERSE = {
    AugmentOp.HFLIP: AugmentOp.HFLIP,
    AugmentOp.VFLIP: AugmentOp.VFLIP,
    AugmentOp.ROT90: AugmentOp.ROT270,
    AugmentOp.ROT180: AugmentOp.ROT180,
    AugmentOp.ROT270: AugmentOp.ROT90,
}


def apply(op, img):
    """Apply ``op``; rotations are clockwise."""
    op = AugmentOp(op)
    if op is AugmentOp.HFLIP:
        out = img[..., :, ::-1]
    elif op is AugmentOp.VFLIP:
        out = img[..., ::-1, :]
    elif op is AugmentOp.ROT90:
        out = np.rot90(img, k=-1, axes=(-2, -1))
    elif op is AugmentOp.ROT180:
        out = img[..., ::-1, ::-1]
    else:
        out = np.rot90(img, k=1, axes=(-2, -1))
    return np.ascontiguousarray(out)


def inverse_of(op):
    return _INVERSE[AugmentOp(op)]


def invert(op, img):
    return apply(inverse_of(op), img)


def pseudo_label_mean(model, x_test, ops=AUGMENT_OPS, executor=None):
    """Average of ``model`` over augmented views, each mapped back to the
    original geometry.  Accumulates in float64 in the order of ``ops``.

    ``executor`` (a ``concurrent.futures.Executor``) lets the views run
    concurrently; the reduction order stays fixed.
    """
    x_test = np.asarray(x_test)

    def one(op):
        view = apply(op, x_test)
        y = np.asarray(model(view))
        if y.shape != view.shape:
            raise ValueError(f"model output {y.shape} does not match input view {view.shape}")
        return invert(op, y)

    outs = list(executor.map(one, ops)) if executor is not None else [one(op) for op in ops]
    acc = np.zeros(x_test.shape, dtype=np.float64)
    for y in outs:
        acc += y
    return acc / len(ops)
