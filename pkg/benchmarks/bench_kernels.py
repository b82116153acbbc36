"""Compiled core vs numpy fallback on the hot kernels.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from causiam import kernels
from causiam.synth import PsfKind, PsfModel, apply_psf, gen_sharp


def cases(rng):
    x = rng.standard_normal((16, 64, 64)).astype(np.float32)
    w = rng.standard_normal((16, 16, 3, 3)).astype(np.float32)
    b = np.zeros(16, np.float32)
    g = rng.standard_normal((16, 64, 64)).astype(np.float32)
    yield "conv3x3 16->16 64x64 f32", lambda impl: kernels.conv3x3(x, w, b, impl=impl)
    yield "conv3x3 grad 16->16 64x64", lambda impl: kernels.conv3x3_grad(x, w, g, impl=impl)
    xd = rng.uniform(size=(3, 64, 64))
    bank = rng.uniform(size=(3, 9, 9))
    bank /= bank.sum(axis=(1, 2), keepdims=True)
    half = np.array([2, 3, 4], dtype=np.int64)
    kid = rng.integers(0, 3, (64, 64)).astype(np.int64)
    yield "psf gather 3x64x64, radius <= 4", lambda impl: kernels.psf_gather(xd, bank, half, kid, impl=impl)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    have_c = kernels.BACKEND == "cython"
    print(f"active backend: {kernels.BACKEND}")
    print(f"{'kernel':<34}{'python ms':>11}{'cython ms':>11}{'speedup':>9}")
    for name, fn in cases(np.random.default_rng(0)):
        t_py = min(timeit.repeat(lambda: fn("python"), number=3, repeat=args.repeat)) / 3 * 1e3
        if have_c:
            t_c = min(timeit.repeat(lambda: fn("cython"), number=3, repeat=args.repeat)) / 3 * 1e3
            print(f"{name:<34}{t_py:>11.2f}{t_c:>11.2f}{t_py / t_c:>8.1f}x")
        else:
            print(f"{name:<34}{t_py:>11.2f}{'-':>11}{'-':>9}")
    # end to end: blurring one synthetic image uses the gather kernel
    sharp = gen_sharp(np.random.default_rng(1), 64, 64)
    psf = PsfModel(PsfKind.DISC, np.full((64, 64), 3.0))
    t = min(timeit.repeat(lambda: apply_psf(sharp, psf), number=3, repeat=args.repeat)) / 3 * 1e3
    print(f"apply_psf 64x64 (active backend): {t:.2f} ms")


if __name__ == "__main__":
    main()
