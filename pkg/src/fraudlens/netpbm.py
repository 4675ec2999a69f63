"""Binary netpbm export: PGM (P5) for grayscale, PPM (P6) for RGB.

Row-major, top-left origin, maxval 255. Grayscale inputs are floats in
[0, 1] quantized by round(v * 255); RGB inputs are uint8 (H, W, 3).
"""

from __future__ import annotations

import numpy as np


def export_image(img, path) -> None:
    arr = img.rgb if hasattr(img, "rgb") else np.asarray(img)
    if arr.ndim == 2:
        _write_pgm(arr, path)
    elif arr.ndim == 3 and arr.shape[2] == 3:
        _write_ppm(arr, path)
    else:
        raise ValueError(f"expected (H, W) grayscale or (H, W, 3) RGB, got {arr.shape}")


def _write_pgm(gray: np.ndarray, path) -> None:
    gray = np.asarray(gray, dtype=np.float64)
    if gray.min() < 0.0 or gray.max() > 1.0:
        raise ValueError("grayscale values must lie in [0, 1]")
    h, w = gray.shape
    data = np.round(gray * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def _write_ppm(rgb: np.ndarray, path) -> None:
    if rgb.dtype != np.uint8:
        raise ValueError("RGB images must be uint8")
    h, w, _ = rgb.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(rgb).tobytes())


def _read_header(fh, magic: bytes):
    if fh.read(2) != magic:
        raise ValueError(f"not a {magic.decode()} file")
    fields = []
    while len(fields) < 3:
        line = fh.readline()
        if not line:
            raise ValueError("truncated header")
        body = line.split(b"#", 1)[0]
        fields.extend(int(tok) for tok in body.split())
    w, h, maxval = fields[:3]
    if maxval != 255:
        raise ValueError("only maxval 255 supported")
    return w, h


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM back as uint8 (H, W)."""
    with open(path, "rb") as fh:
        w, h = _read_header(fh, b"P5")
        data = np.frombuffer(fh.read(w * h), dtype=np.uint8)
    return data.reshape(h, w)


def read_ppm(path) -> np.ndarray:
    """Read a binary PPM back as uint8 (H, W, 3)."""
    with open(path, "rb") as fh:
        w, h = _read_header(fh, b"P6")
        data = np.frombuffer(fh.read(w * h * 3), dtype=np.uint8)
    return data.reshape(h, w, 3)
