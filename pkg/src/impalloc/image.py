"""Luma image I/O and aspect-preserving rescaling.

Images are plain ``numpy`` arrays of shape ``(H, W)`` and dtype ``uint8``.
Netpbm files (PGM ``P2``/``P5``, PPM ``P3``/``P6``) are read natively; PNG
and other raster formats go through Pillow when it is installed.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

BT601 = (0.299, 0.587, 0.114)


class ImageFormatError(ValueError):
    """Raised for unreadable, unsupported or malformed image files."""


@dataclass(frozen=True)
class ScaleInfo:
    """Geometry of one layer's feature maps relative to the source image.

    ``scale`` is ``C_l / max(W, H)``; ``width``/``height`` are the actual
    map dimensions at that layer and ``src_width``/``src_height`` the source
    image dimensions.
    """

    layer: int
    size: int
    scale: float
    width: int
    height: int
    src_width: int
    src_height: int


def to_luma(rgb: np.ndarray) -> np.ndarray:
    """Convert an ``(H, W, 3)`` RGB array to 8-bit luma with BT.601 weights."""
    rgb = np.asarray(rgb, dtype=np.float64)
    y = rgb[..., 0] * BT601[0] + rgb[..., 1] * BT601[1] + rgb[..., 2] * BT601[2]
    return np.clip(np.floor(y + 0.5), 0, 255).astype(np.uint8)


def _netpbm_tokens(buf: bytes, count: int, pos: int):
    """Read ``count`` whitespace separated header integers, skipping comments."""
    values = []
    n = len(buf)
    while len(values) < count:
        while pos < n and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos : pos + 1] == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ImageFormatError("truncated netpbm header")
        try:
            values.append(int(buf[start:pos]))
        except ValueError as exc:
            raise ImageFormatError(f"bad netpbm header field {buf[start:pos]!r}") from exc
    return values, pos


def _decode_netpbm(buf: bytes) -> np.ndarray:
    magic = buf[:2]
    if magic not in (b"P2", b"P3", b"P5", b"P6"):
        raise ImageFormatError(f"unsupported netpbm magic {magic!r}")
    (width, height, maxval), pos = _netpbm_tokens(buf, 3, 2)
    if width <= 0 or height <= 0:
        raise ImageFormatError("zero image dimension")
    if not 0 < maxval < 65536:
        raise ImageFormatError(f"bad maxval {maxval}")
    channels = 3 if magic in (b"P3", b"P6") else 1
    count = width * height * channels
    if magic in (b"P5", b"P6"):
        pos += 1  # single whitespace byte before the raster
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
        raw = buf[pos : pos + count * dtype.itemsize]
        if len(raw) != count * dtype.itemsize:
            raise ImageFormatError("truncated raster")
        data = np.frombuffer(raw, dtype=dtype).astype(np.float64)
    else:
        fields = buf[pos:].split()
        if len(fields) < count:
            raise ImageFormatError("truncated raster")
        data = np.array([int(f) for f in fields[:count]], dtype=np.float64)
    if maxval != 255:
        data = np.floor(data * 255.0 / maxval + 0.5)
    if channels == 3:
        return to_luma(data.reshape(height, width, 3))
    return np.clip(data, 0, 255).astype(np.uint8).reshape(height, width)


def load_image(path: str | os.PathLike) -> np.ndarray:
    """Load a raster file as an 8-bit luma plane.

    Color inputs are reduced to luma with the BT.601 weights. PGM/PPM need no
    extra dependencies; other formats (PNG, ...) require Pillow.
    """
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise ImageFormatError(f"cannot read {path}: {exc}") from exc
    if buf[:1] == b"P" and buf[1:2] in (b"2", b"3", b"5", b"6"):
        return _decode_netpbm(buf)
    try:
        from PIL import Image as PILImage
    except ImportError as exc:  # pragma: no cover - Pillow is optional
        raise ImageFormatError(f"unsupported format for {path} (Pillow not installed)") from exc
    try:
        with PILImage.open(path) as im:
            im.load()
            if im.mode in ("L", "I;16", "I", "F"):
                arr = np.asarray(im, dtype=np.float64)
                if im.mode != "L":
                    peak = arr.max() if arr.size else 0
                    arr = arr * (255.0 / 65535.0) if peak > 255 else arr
                img = np.clip(np.floor(arr + 0.5), 0, 255).astype(np.uint8)
            else:
                img = to_luma(np.asarray(im.convert("RGB")))
    except (OSError, ValueError) as exc:
        raise ImageFormatError(f"unsupported or corrupt image {path}: {exc}") from exc
    if img.size == 0:
        raise ImageFormatError("zero image dimension")
    return img


def save_pgm(path: str | os.PathLike, img: np.ndarray) -> None:
    """Write an 8-bit plane as binary PGM (P5)."""
    img = np.asarray(img)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ValueError("save_pgm expects a 2-D uint8 array")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(img).tobytes())


def _bilinear_axis(n_in: int, n_out: int) -> np.ndarray:
    """Interpolation matrix ``(n_out, n_in)`` with half-pixel centers and edge clamping."""
    m = np.zeros((n_out, n_in))
    if n_in == 1:
        m[:, 0] = 1.0
        return m
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    rows = np.arange(n_out)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    return m


def resize_bilinear(plane: np.ndarray, width: int, height: int) -> np.ndarray:
    """Bilinear resize of a float plane (no rounding)."""
    plane = np.asarray(plane, dtype=np.float64)
    h, w = plane.shape
    if (w, h) == (width, height):
        return plane.copy()
    return _bilinear_axis(h, height) @ plane @ _bilinear_axis(w, width).T


def rescale_keep_aspect(img: np.ndarray, size: int = 416) -> tuple[np.ndarray, ScaleInfo]:
    """Scale ``img`` so its longer side equals ``size``, keeping the aspect ratio.

    Returns the rescaled 8-bit image and the layer-1 :class:`ScaleInfo`.
    No letterbox padding is added.
    """
    if size < 16:
        raise ValueError(f"target size must be >= 16, got {size}")
    img = np.asarray(img)
    h, w = img.shape
    scale = size / max(w, h)
    new_w = max(1, int(math.floor(w * scale + 0.5)))
    new_h = max(1, int(math.floor(h * scale + 0.5)))
    info = ScaleInfo(layer=1, size=size, scale=scale, width=new_w, height=new_h,
                     src_width=w, src_height=h)
    if (new_w, new_h) == (w, h):
        return img.astype(np.uint8, copy=True), info
    out = resize_bilinear(img, new_w, new_h)
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8), info
