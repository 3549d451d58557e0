"""Complex 2-D field primitives: unitary FFTs, embedding, cropping and rendering.

Fields are plain 2-D ``numpy`` arrays (complex128 unless stated otherwise).
All transforms use the orthonormal DFT convention so that Parseval's
identity holds without size factors.
"""
from __future__ import annotations

import os

import numpy as np
import scipy.fft as sfft

__all__ = [
    "FieldSizeError",
    "fft2",
    "ifft2",
    "cfft2",
    "icfft2",
    "pad_embed",
    "extract_block",
    "crop_center",
    "crop_offset",
    "field_to_rgb",
    "render_png",
]


class FieldSizeError(ValueError):
    """Raised when an array size is incompatible with the requested operation."""


def fft2(f):
    """Orthonormal 2-D DFT over the last two axes."""
    return sfft.fft2(f, axes=(-2, -1), norm="ortho")


def ifft2(f):
    """Inverse of :func:`fft2`."""
    return sfft.ifft2(f, axes=(-2, -1), norm="ortho")


def cfft2(f):
    """Centered orthonormal DFT: zero frequency at index ``n // 2``."""
    axes = (-2, -1)
    return sfft.fftshift(sfft.fft2(sfft.ifftshift(f, axes=axes), axes=axes, norm="ortho"), axes=axes)


def icfft2(f):
    """Inverse of :func:`cfft2`."""
    axes = (-2, -1)
    return sfft.fftshift(sfft.ifft2(sfft.ifftshift(f, axes=axes), axes=axes, norm="ortho"), axes=axes)


def _block_origin(padded_size: int, size: int) -> int:
    return (padded_size - size) // 2


def pad_embed(x, padded_size: int, fill: complex = 1.0 + 0.0j):
    """Embed ``x`` in the center of a square array of free space.

    Parameters
    ----------
    x : ndarray, shape (H, W)
        Object transmission function.
    padded_size : int
        Side length of the output array. Must hold the whole object.
    fill : complex
        Value outside the object block (free space is ``1 + 0j``).

    Returns
    -------
    ndarray, shape (padded_size, padded_size)
        Object top-left corner sits at ``((N - H) // 2, (N - W) // 2)``.
    """
    x = np.asarray(x)
    h, w = x.shape
    if padded_size < max(h, w):
        raise FieldSizeError(f"padded size {padded_size} cannot hold a {h}x{w} object")
    out = np.full((padded_size, padded_size), fill, dtype=np.result_type(x.dtype, np.complex128))
    oy, ox = _block_origin(padded_size, h), _block_origin(padded_size, w)
    out[oy:oy + h, ox:ox + w] = x
    return out


def extract_block(padded, shape):
    """Inverse of :func:`pad_embed`: return the centered ``shape`` block."""
    h, w = shape
    n0, n1 = padded.shape[-2:]
    oy, ox = _block_origin(n0, h), _block_origin(n1, w)
    return padded[..., oy:oy + h, ox:ox + w]


def crop_offset(in_size: int, out_size: int) -> int:
    """Start index of the centered ``out_size`` window (extra pixel dropped at the end)."""
    return (in_size - out_size) // 2


def crop_center(f, out_size: int):
    """Centered square crop. For odd size differences the extra row/column is
    dropped at the bottom/right."""
    f = np.asarray(f)
    h, w = f.shape[-2:]
    if out_size > h or out_size > w:
        raise FieldSizeError(f"cannot crop {out_size} from a {h}x{w} field")
    oy, ox = crop_offset(h, out_size), crop_offset(w, out_size)
    return f[..., oy:oy + out_size, ox:ox + out_size]


def _hsv_to_rgb(h, s, v):
    # vectorized; h in [0, 1)
    i = np.floor(h * 6.0).astype(int) % 6
    f = h * 6.0 - np.floor(h * 6.0)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    choices = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)]
    rgb = np.zeros(h.shape + (3,))
    for k, (r, g, b) in enumerate(choices):
        sel = i == k
        rgb[sel, 0] = np.broadcast_to(r, h.shape)[sel]
        rgb[sel, 1] = np.broadcast_to(g, h.shape)[sel]
        rgb[sel, 2] = np.broadcast_to(b, h.shape)[sel]
    return rgb


def field_to_rgb(f, mode: str = "complex"):
    """Map a complex field to an ``(H, W, 3)`` uint8 image.

    ``complex``: hue = phase / 2pi, value = min(|f|, 1), full saturation.
    ``magnitude``: grayscale of min(|f|, 1).
    ``phase``: hue only, at full value and saturation.
    """
    f = np.asarray(f)
    mag = np.minimum(np.abs(f), 1.0)
    hue = np.mod(np.angle(f) / (2 * np.pi), 1.0)
    if mode == "complex":
        rgb = _hsv_to_rgb(hue, np.ones_like(hue), mag)
    elif mode == "magnitude":
        rgb = np.repeat(mag[..., None], 3, axis=-1)
    elif mode == "phase":
        rgb = _hsv_to_rgb(hue, np.ones_like(hue), np.ones_like(hue))
    else:
        raise ValueError(f"unknown render mode {mode!r}")
    return np.clip(np.round(rgb * 255.0), 0, 255).astype(np.uint8)


def render_png(f, path, mode: str = "complex") -> None:
    """Write a field as a PNG (see :func:`field_to_rgb` for the color mapping)."""
    from PIL import Image

    Image.fromarray(field_to_rgb(f, mode), mode="RGB").save(os.fspath(path), format="PNG")
