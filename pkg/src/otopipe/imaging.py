"""Pure image kernels: grayscale, blur and information scores, crop, hashing.

All functions operate on plain numpy arrays and never mutate their inputs:
grayscale images are ``(H, W) uint8``, color images ``(H, W, 3) uint8``.
Every kernel is deterministic, so frames can be scored in parallel without
coordination.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError

# Kernel used for the blur score. 4-neighbor Laplacian with replicate
# padding: stable at borders and simple enough to reproduce exactly in a
# reference implementation.
LAPLACIAN_KERNEL = np.array([[0, 1, 0], [1, -4, 1], [0, 1, 0]], dtype=np.int64)


def _check_gray(img: np.ndarray, op: str) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 2:
        raise DataError(f"{op}: expected a 2-D grayscale array, got shape {img.shape}")
    if img.size == 0:
        raise DataError(f"{op}: empty image")
    if img.dtype != np.uint8:
        raise DataError(f"{op}: expected uint8 intensities, got {img.dtype}")
    return img


def to_grayscale(rgb: np.ndarray) -> np.ndarray:
    """Convert an 8-bit RGB image to grayscale with BT.601 luma weights.

    Per pixel: ``floor(0.299 R + 0.587 G + 0.114 B + 0.5)`` (round half up),
    clamped to [0, 255].
    """
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise DataError(f"to_grayscale: expected (H, W, 3) array, got shape {rgb.shape}")
    if rgb.shape[0] == 0 or rgb.shape[1] == 0:
        raise DataError("to_grayscale: zero-dimension image")
    if rgb.dtype != np.uint8:
        raise DataError(f"to_grayscale: expected uint8, got {rgb.dtype}")
    luma = (
        0.299 * rgb[:, :, 0].astype(np.float64)
        + 0.587 * rgb[:, :, 1].astype(np.float64)
        + 0.114 * rgb[:, :, 2].astype(np.float64)
    )
    return np.clip(np.floor(luma + 0.5), 0, 255).astype(np.uint8)


def laplacian_response(img: np.ndarray) -> np.ndarray:
    """Signed 4-neighbor Laplacian response with replicate border padding."""
    img = _check_gray(img, "laplacian_response")
    if img.shape[0] < 3 or img.shape[1] < 3:
        raise DataError(f"laplacian_response: image must be at least 3x3, got {img.shape}")
    p = np.pad(img.astype(np.int64), 1, mode="edge")
    return p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:] - 4 * p[1:-1, 1:-1]


def laplacian_variance(img: np.ndarray) -> float:
    """Blur score: population variance of the Laplacian response map.

    Low values mean few edges / heavy blur. Always >= 0 and exactly 0 on
    constant images.
    """
    resp = laplacian_response(img).astype(np.float64)
    return float(resp.var())


def shannon_entropy(img: np.ndarray) -> float:
    """Information score: entropy of the 256-bin intensity histogram, in bits.

    Ranges over [0, 8] for 8-bit images; 0 for constant images, 8 for an
    exactly uniform histogram. Depends only on the histogram, not on pixel
    positions.
    """
    img = _check_gray(img, "shannon_entropy")
    counts = np.bincount(img.ravel(), minlength=256)
    p = counts[counts > 0] / img.size
    return float(-(p * np.log2(p)).sum())


def circular_crop(img: np.ndarray, fill: int = 0) -> np.ndarray:
    """Mask everything outside the inscribed circle.

    Pixels strictly farther than ``min(w, h) / 2`` from the image center
    ``((w-1)/2, (h-1)/2)`` are set to ``fill``; dimensions are preserved.
    Matches the circular aperture of an otoscope, which leaves a black
    annulus around the useful field of view.
    """
    img = _check_gray(img, "circular_crop")
    if not 0 <= fill <= 255:
        raise DataError(f"circular_crop: fill must be in [0, 255], got {fill}")
    h, w = img.shape
    radius = min(w, h) / 2.0
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy = np.arange(h, dtype=np.float64)[:, None] - cy
    xx = np.arange(w, dtype=np.float64)[None, :] - cx
    outside = yy * yy + xx * xx > radius * radius
    out = img.copy()
    out[outside] = fill
    return out


def inscribed_mask(height: int, width: int) -> np.ndarray:
    """Boolean mask of pixels kept by :func:`circular_crop` (True = kept)."""
    radius = min(width, height) / 2.0
    cy, cx = (height - 1) / 2.0, (width - 1) / 2.0
    yy = np.arange(height, dtype=np.float64)[:, None] - cy
    xx = np.arange(width, dtype=np.float64)[None, :] - cx
    return yy * yy + xx * xx <= radius * radius


def _overlap_weights(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) row-stochastic matrix of box-filter overlap fractions.

    Output cell ``i`` averages the source interval ``[i*n_in/n_out,
    (i+1)*n_in/n_out)``, with boundary pixels weighted by their fractional
    coverage. Exact for both down- and upsampling.
    """
    w = np.zeros((n_out, n_in), dtype=np.float64)
    scale = n_in / n_out
    for i in range(n_out):
        lo = i * scale
        hi = (i + 1) * scale
        first = int(np.floor(lo))
        last = min(int(np.ceil(hi)), n_in)
        for j in range(first, last):
            cover = min(hi, j + 1) - max(lo, j)
            if cover > 0:
                w[i, j] = cover / scale
    return w


def box_resample(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Area-weighted box-filter resample to ``(out_h, out_w)``, float64."""
    img = _check_gray(img, "box_resample")
    wr = _overlap_weights(img.shape[0], out_h)
    wc = _overlap_weights(img.shape[1], out_w)
    return wr @ img.astype(np.float64) @ wc.T


THUMB_SIDE = 32
HASH_GRID = 8
HASH_BITS = HASH_GRID * HASH_GRID


@dataclass(frozen=True)
class FrameFingerprint:
    """64-bit average hash plus the 32x32 thumbnail it was derived from.

    Bit ``r * 8 + c`` of ``bits`` is set iff cell ``(r, c)`` of the 8x8
    grid mean exceeds the grand mean of the grid (strict inequality, so a
    constant image hashes to 0).
    """

    bits: int
    thumb: np.ndarray

    def __post_init__(self):
        if not 0 <= self.bits < (1 << HASH_BITS):
            raise DataError(f"fingerprint bits out of range: {self.bits:#x}")


def bits_from_thumb(thumb: np.ndarray) -> int:
    """Average-hash bits of a 32x32 thumbnail.

    The thumbnail is reduced to an 8x8 grid of cell means and each cell is
    compared against the grid's grand mean (strict >).
    """
    thumb = _check_gray(thumb, "bits_from_thumb")
    if thumb.shape != (THUMB_SIDE, THUMB_SIDE):
        raise DataError(f"bits_from_thumb: expected 32x32 thumbnail, got {thumb.shape}")
    block = THUMB_SIDE // HASH_GRID
    cells = thumb.astype(np.float64).reshape(HASH_GRID, block, HASH_GRID, block).mean(axis=(1, 3))
    grand = cells.mean()
    bits = 0
    for r in range(HASH_GRID):
        for c in range(HASH_GRID):
            if cells[r, c] > grand:
                bits |= 1 << (r * HASH_GRID + c)
    return bits


def make_thumb(img: np.ndarray) -> np.ndarray:
    """32x32 uint8 box-filter thumbnail of a grayscale image."""
    img = _check_gray(img, "make_thumb")
    if img.shape[0] < 8 or img.shape[1] < 8:
        raise DataError(f"make_thumb: image must be at least 8x8, got {img.shape}")
    thumb = np.floor(box_resample(img, THUMB_SIDE, THUMB_SIDE) + 0.5)
    return np.clip(thumb, 0, 255).astype(np.uint8)


def fingerprint(img: np.ndarray) -> FrameFingerprint:
    """Average-hash fingerprint of a grayscale image.

    The image is box-filtered down to a 32x32 uint8 thumbnail and the hash
    bits derived from it via :func:`bits_from_thumb`.
    """
    thumb = make_thumb(img)
    return FrameFingerprint(bits=bits_from_thumb(thumb), thumb=thumb)


def hamming(a: FrameFingerprint, b: FrameFingerprint) -> int:
    """Number of differing hash bits, in [0, 64]. Symmetric, 0 iff equal."""
    return (a.bits ^ b.bits).bit_count()


def hamming_bits(a: int, b: int) -> int:
    """Hamming distance between two raw 64-bit hash values."""
    return (a ^ b).bit_count()
