"""Toy intra codec: block DCT, uniform scalar quantizer, run-level exp-Golomb.

There is no prediction. Each ``cu x cu`` block is level shifted by 128,
transformed with an orthonormal DCT-II, quantized with step
``2 ** ((QP - 4) / 6)`` and entropy coded independently, so per-block bit
counts are exact and blocks can be coded under a per-block QP.

Bitstream layout (all integers big endian)::

    offset  size      field
    0       4         magic b"IMPC"
    4       1         format version (1)
    5       2         width
    7       2         height
    9       1         cu_size
    10      1         QP field width in bits (6)
    11      ceil(6B/8) QP map, 6 bits per block in raster order, zero padded
    ...     4B        per-block payload length in bits (u32 each)
    ...     ceil(P/8) payload: block codes concatenated, zero padded

where ``B`` is the number of blocks and ``P`` the sum of the payload lengths.
Header bits are not counted against the rate-control budget.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.fft import dctn, idctn

from .entropy import BitReader, BitWriter, MalformedStreamError, decode_levels, encode_levels
from .rate_control import QP_MAX, QP_MIN, RateControlSession

MAGIC = b"IMPC"
VERSION = 1
QP_FIELD_BITS = 6
CU_SIZES = (8, 16)
_HEADER = struct.Struct(">4sBHHBB")


def _check_size(n: int) -> None:
    if n not in CU_SIZES:
        raise ValueError(f"unsupported block size {n}; expected one of {CU_SIZES}")


def dct2(block: np.ndarray) -> np.ndarray:
    """Orthonormal 2-D DCT-II over the last two axes."""
    block = np.asarray(block, dtype=np.float64)
    _check_size(block.shape[-1])
    return dctn(block, type=2, norm="ortho", axes=(-2, -1))


def idct2(coeffs: np.ndarray) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=np.float64)
    _check_size(coeffs.shape[-1])
    return idctn(coeffs, type=2, norm="ortho", axes=(-2, -1))


def qstep(qp) -> np.ndarray | float:
    return 2.0 ** ((np.asarray(qp, dtype=np.float64) - 4.0) / 6.0)


def quantize(coeffs, qp) -> np.ndarray:
    """Round-half-away-from-zero of ``coeffs / step``; ``qp`` broadcasts."""
    scaled = np.asarray(coeffs, dtype=np.float64) / qstep(qp)
    return (np.sign(scaled) * np.floor(np.abs(scaled) + 0.5)).astype(np.int64)


def dequantize(levels, qp) -> np.ndarray:
    return np.asarray(levels, dtype=np.float64) * qstep(qp)


@lru_cache(maxsize=None)
def zigzag_order(n: int) -> np.ndarray:
    """Flat indices of an ``n x n`` block in JPEG zig-zag order."""
    cells = sorted(((i, j) for i in range(n) for j in range(n)),
                   key=lambda ij: (ij[0] + ij[1], ij[0] if (ij[0] + ij[1]) % 2 else ij[1]))
    return np.array([i * n + j for i, j in cells])


def to_blocks(plane: np.ndarray, cu: int) -> np.ndarray:
    """``(H, W)`` plane with dims divisible by ``cu`` -> ``(rows, cols, cu, cu)``."""
    h, w = plane.shape
    return plane.reshape(h // cu, cu, w // cu, cu).swapaxes(1, 2)


def from_blocks(blocks: np.ndarray) -> np.ndarray:
    rows, cols, cu, _ = blocks.shape
    return blocks.swapaxes(1, 2).reshape(rows * cu, cols * cu)


def pad_to_blocks(img: np.ndarray, cu: int) -> np.ndarray:
    h, w = img.shape
    return np.pad(img, ((0, (-h) % cu), (0, (-w) % cu)), mode="edge")


def reconstruct(levels: np.ndarray, qp_map: np.ndarray, width: int, height: int) -> np.ndarray:
    """Decode-side reconstruction from ``(rows, cols, cu*cu)`` zig-zag levels."""
    rows, cols, n2 = levels.shape
    cu = math.isqrt(n2)
    raster = np.empty_like(levels)
    raster[..., zigzag_order(cu)] = levels
    coeffs = dequantize(raster.reshape(rows, cols, cu, cu), qp_map[..., None, None])
    plane = from_blocks(idct2(coeffs)) + 128.0
    return np.clip(np.floor(plane + 0.5), 0, 255).astype(np.uint8)[:height, :width]


@dataclass
class EncodeResult:
    data: bytes
    qp_map: np.ndarray = field(repr=False)
    block_bits: np.ndarray = field(repr=False)
    recon: np.ndarray = field(repr=False)

    @property
    def payload_bits(self) -> int:
        return int(self.block_bits.sum())


def encode_image(img: np.ndarray, qp: int | None = None, session: RateControlSession | None = None,
                 cu_size: int = 16) -> EncodeResult:
    """Code ``img`` at a fixed QP, or block by block under a rate-control session.

    In session mode each block asks the session for its QP and then commits
    its exact coded size, in raster order.
    """
    _check_size(cu_size)
    if (qp is None) == (session is None):
        raise ValueError("give exactly one of a fixed qp or a rate-control session")
    img = np.asarray(img)
    if img.ndim != 2 or img.size == 0:
        raise ValueError("expected a nonempty 2-D luma image")
    height, width = img.shape
    if width > 0xFFFF or height > 0xFFFF:
        raise ValueError("image dimensions exceed 65535")
    plane = pad_to_blocks(img.astype(np.float64), cu_size) - 128.0
    blocks = to_blocks(plane, cu_size)
    rows, cols = blocks.shape[:2]
    if session is not None and session.total_blocks != rows * cols:
        raise ValueError(f"session plans {session.total_blocks} blocks, image has {rows * cols}")
    coeffs = dct2(blocks).reshape(rows, cols, cu_size * cu_size)[..., zigzag_order(cu_size)]

    levels = np.zeros(coeffs.shape, dtype=np.int64)
    qp_map = np.zeros((rows, cols), dtype=np.int64)
    block_bits = np.zeros((rows, cols), dtype=np.int64)
    payload = BitWriter()
    if qp is not None:
        if not QP_MIN <= qp <= QP_MAX:
            raise ValueError(f"QP {qp} outside [{QP_MIN}, {QP_MAX}]")
        qp_map[:] = qp
        levels = quantize(coeffs, qp)
    for r in range(rows):
        for c in range(cols):
            if session is not None:
                q = session.next_qp()
                qp_map[r, c] = q
                levels[r, c] = quantize(coeffs[r, c], q)
            start = payload.length
            encode_levels(levels[r, c], payload)
            block_bits[r, c] = payload.length - start
            if session is not None:
                session.commit(int(block_bits[r, c]))

    data = _pack(width, height, cu_size, qp_map, block_bits, payload)
    return EncodeResult(data, qp_map, block_bits, reconstruct(levels, qp_map, width, height))


def _pack(width, height, cu, qp_map, block_bits, payload: BitWriter) -> bytes:
    qp_field = BitWriter()
    for q in qp_map.ravel().tolist():
        qp_field.write_bits(q, QP_FIELD_BITS)
    lengths = np.asarray(block_bits.ravel(), dtype=">u4").tobytes()
    return b"".join([
        _HEADER.pack(MAGIC, VERSION, width, height, cu, QP_FIELD_BITS),
        qp_field.to_bytes(),
        lengths,
        payload.to_bytes(),
    ])


@dataclass
class Header:
    width: int
    height: int
    cu_size: int
    qp_map: np.ndarray = field(repr=False)
    block_bits: np.ndarray = field(repr=False)
    payload_offset: int = 0

    @property
    def payload_bits(self) -> int:
        return int(self.block_bits.sum())


def parse_header(data: bytes) -> Header:
    if len(data) < _HEADER.size:
        raise MalformedStreamError("stream shorter than its header")
    magic, version, width, height, cu, qp_bits = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise MalformedStreamError(f"bad magic {magic!r}")
    if version != VERSION:
        raise MalformedStreamError(f"unsupported version {version}")
    if cu not in CU_SIZES or qp_bits != QP_FIELD_BITS or width == 0 or height == 0:
        raise MalformedStreamError("invalid header fields")
    rows, cols = -(-height // cu), -(-width // cu)
    n = rows * cols
    pos = _HEADER.size
    qp_len = -(-n * qp_bits // 8)
    if len(data) < pos + qp_len + 4 * n:
        raise MalformedStreamError("truncated header")
    reader = BitReader(data[pos : pos + qp_len])
    qp_map = np.array([reader.read_bits(qp_bits) for _ in range(n)], dtype=np.int64).reshape(rows, cols)
    if qp_map.max() > QP_MAX:
        raise MalformedStreamError("QP out of range")
    pos += qp_len
    block_bits = np.frombuffer(data[pos : pos + 4 * n], dtype=">u4").astype(np.int64).reshape(rows, cols)
    pos += 4 * n
    return Header(width, height, cu, qp_map, block_bits, pos)


def decode_image(data: bytes) -> np.ndarray:
    """Decode a stream produced by :func:`encode_image` into the 8-bit plane."""
    header = parse_header(data)
    payload = data[header.payload_offset :]
    total = header.payload_bits
    if len(payload) != -(-total // 8):
        raise MalformedStreamError("payload size does not match the block lengths")
    reader = BitReader(payload, total)
    cu = header.cu_size
    rows, cols = header.qp_map.shape
    levels = np.zeros((rows, cols, cu * cu), dtype=np.int64)
    for r in range(rows):
        for c in range(cols):
            start = reader.pos
            levels[r, c] = decode_levels(reader, cu * cu)
            if reader.pos - start != header.block_bits[r, c]:
                raise MalformedStreamError(f"block ({r}, {c}) length mismatch")
    return reconstruct(levels, header.qp_map, header.width, header.height)


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """PSNR in dB for 8-bit planes; ``math.inf`` for identical images."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    return math.inf if mse == 0 else 10.0 * math.log10(255.0**2 / mse)


def weighted_psnr(a: np.ndarray, b: np.ndarray, weights: np.ndarray) -> float:
    """PSNR with per-pixel squared error weighted by ``weights``.

    Weights are renormalized to mean 1; an all-zero weight map falls back to
    plain PSNR.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if not a.shape == b.shape == weights.shape:
        raise ValueError(f"shape mismatch {a.shape}, {b.shape}, {weights.shape}")
    mean_w = weights.mean()
    if not mean_w > 0:
        return psnr(a, b)
    mse = float(np.mean(weights / mean_w * (a - b) ** 2))
    return math.inf if mse == 0 else 10.0 * math.log10(255.0**2 / mse)
