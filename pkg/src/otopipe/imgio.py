"""Image file I/O: binary PGM (P5) and PPM (P6), optional PNG via Pillow.

The netpbm formats are implemented here so the toolkit round-trips frames
bit-exactly with no imaging dependency. PNG support is a convenience switch:
it activates automatically when Pillow is importable.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError
from .imaging import to_grayscale

try:
    from PIL import Image as _PILImage

    PNG_ENABLED = True
except ImportError:  # pragma: no cover - depends on environment
    _PILImage = None
    PNG_ENABLED = False

IMAGE_EXTENSIONS = (".pgm", ".ppm", ".png")


def _read_pnm_token(data: bytes, pos: int) -> tuple[bytes, int]:
    # skip whitespace and '#' comments between header tokens
    n = len(data)
    while pos < n:
        c = data[pos : pos + 1]
        if c in b" \t\r\n":
            pos += 1
        elif c == b"#":
            while pos < n and data[pos : pos + 1] not in b"\r\n":
                pos += 1
        else:
            break
    start = pos
    while pos < n and data[pos : pos + 1] not in b" \t\r\n":
        pos += 1
    if start == pos:
        raise FormatError("truncated netpbm header", offset=pos)
    return data[start:pos], pos


def read_pnm(path: str | os.PathLike) -> np.ndarray:
    """Read a binary PGM (P5) or PPM (P6) file with maxval <= 255."""
    data = Path(path).read_bytes()
    magic, pos = _read_pnm_token(data, 0)
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"{path}: unsupported netpbm magic {magic!r}", offset=0)
    fields = []
    for _ in range(3):
        tok, pos = _read_pnm_token(data, pos)
        try:
            fields.append(int(tok))
        except ValueError:
            raise FormatError(f"{path}: bad header token {tok!r}", offset=pos) from None
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise FormatError(f"{path}: bad dimensions {width}x{height}", offset=pos)
    if not 0 < maxval <= 255:
        raise FormatError(f"{path}: unsupported maxval {maxval}", offset=pos)
    pos += 1  # single whitespace byte separates header from raster
    channels = 1 if magic == b"P5" else 3
    expected = width * height * channels
    raster = data[pos : pos + expected]
    if len(raster) != expected:
        raise FormatError(
            f"{path}: raster truncated, expected {expected} bytes, got {len(raster)}",
            offset=pos + len(raster),
        )
    arr = np.frombuffer(raster, dtype=np.uint8)
    if channels == 1:
        return arr.reshape(height, width).copy()
    return arr.reshape(height, width, 3).copy()


def write_pnm(path: str | os.PathLike, img: np.ndarray) -> None:
    """Write a grayscale array as binary PGM or an RGB array as binary PPM."""
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise DataError(f"write_pnm: expected uint8 image, got {img.dtype}")
    if img.ndim == 2:
        magic = b"P5"
        h, w = img.shape
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6"
        h, w = img.shape[:2]
    else:
        raise DataError(f"write_pnm: unsupported shape {img.shape}")
    header = b"%s\n%d %d\n255\n" % (magic, w, h)
    Path(path).write_bytes(header + img.tobytes())


def read_image(path: str | os.PathLike) -> np.ndarray:
    """Read an image file as uint8 grayscale ``(H, W)`` or RGB ``(H, W, 3)``."""
    suffix = Path(path).suffix.lower()
    if suffix in (".pgm", ".ppm"):
        return read_pnm(path)
    if suffix == ".png":
        if not PNG_ENABLED:
            raise DataError(f"{path}: PNG support requires Pillow (install extra 'png')")
        with _PILImage.open(path) as im:
            if im.mode in ("L", "RGB"):
                return np.asarray(im, dtype=np.uint8)
            return np.asarray(im.convert("RGB"), dtype=np.uint8)
    raise DataError(f"{path}: unsupported image extension {suffix!r}")


def load_gray(path: str | os.PathLike) -> np.ndarray:
    """Read an image and reduce it to grayscale if it has color channels."""
    img = read_image(path)
    if img.ndim == 3:
        return to_grayscale(img)
    return img
