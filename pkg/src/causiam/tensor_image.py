"""Image I/O and small tensor helpers.

Images are numpy arrays of shape (3, H, W) with values in [0, 1].  Tensors
are plain row-major (C-order) numpy arrays; nothing here wraps them.
"""

from pathlib import Path

import numpy as np
from PIL import Image as PILImage


class ImageFormatError(ValueError):
    pass


def flat_index(shape, index):
    """Row-major offset of ``index`` inside an array of ``shape``."""
    if len(shape) != len(index):
        raise IndexError(f"index rank {len(index)} does not match shape rank {len(shape)}")
    off = 0
    for extent, i in zip(shape, index):
        if not 0 <= i < extent:
            raise IndexError(f"index {tuple(index)} out of range for shape {tuple(shape)}")
        off = off * extent + i
    return off


def clamp01(x):
    return np.clip(x, 0.0, 1.0)


def quantize(img):
    """8-bit quantization, round-half-up after clamping."""
    return np.floor(clamp01(np.asarray(img, dtype=np.float64)) * 255.0 + 0.5).astype(np.uint8)


def _read_ppm(path):
    data = Path(path).read_bytes()
    if not data.startswith(b"P6"):
        raise ImageFormatError(f"{path}: not a binary PPM (P6)")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError(f"{path}: truncated PPM header")
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace byte before the raster
    w, h, maxval = fields
    if maxval <= 0 or maxval >= 1 << 16:
        raise ImageFormatError(f"{path}: unsupported PPM maxval {maxval} (bit depth > 16)")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    n = w * h * 3
    raster = np.frombuffer(data, dtype=dtype, count=n, offset=pos)
    return raster.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float64) / maxval


def _read_png(path):
    with PILImage.open(path) as im:
        mode = im.mode
        if mode in ("I;16", "I;16B", "I;16L"):
            arr = np.asarray(im, dtype=np.float64) / 65535.0
            return np.repeat(arr[None], 3, axis=0)
        if mode == "I":
            arr = np.asarray(im, dtype=np.float64)
            if arr.max(initial=0) > 65535:
                raise ImageFormatError(f"{path}: unsupported bit depth (> 16)")
            return np.repeat(arr[None] / 65535.0, 3, axis=0)
        if mode not in ("RGB", "RGBA", "L", "P", "LA"):
            raise ImageFormatError(f"{path}: unsupported PNG mode {mode}")
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return arr.transpose(2, 0, 1)


def load_image(path):
    """Read a PNG or binary PPM into a float64 (3, H, W) array in [0, 1]."""
    path = Path(path)
    ext = path.suffix.lower()
    if ext in (".ppm", ".pnm"):
        reader = _read_ppm
    elif ext == ".png":
        reader = _read_png
    else:
        raise ImageFormatError(f"{path}: unknown image extension {ext!r}")
    try:
        return np.ascontiguousarray(reader(path))
    except (ImageFormatError, FileNotFoundError):
        raise
    except (OSError, ValueError) as exc:
        raise ImageFormatError(f"{path}: unreadable image ({exc})") from exc


def save_image(img, path):
    """Write an image as 8-bit PNG or P6 PPM (chosen by extension)."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"expected (3, H, W) image, got shape {img.shape}")
    q = quantize(img).transpose(1, 2, 0)
    path = Path(path)
    ext = path.suffix.lower()
    if ext in (".ppm", ".pnm"):
        h, w = q.shape[:2]
        with open(path, "wb") as fh:
            fh.write(b"P6\n%d %d\n255\n" % (w, h))
            fh.write(np.ascontiguousarray(q).tobytes())
    elif ext == ".png":
        PILImage.fromarray(np.ascontiguousarray(q)).save(path, format="PNG")
    else:
        raise ImageFormatError(f"{path}: unknown image extension {ext!r}")
