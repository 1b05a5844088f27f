"""Bit-level I/O and the run-level exp-Golomb coefficient coder.

A block of zig-zag ordered levels is coded as::

    ue(number of nonzero levels)
    repeated for each nonzero level:
        ue(zero run before it)  ue(|level| - 1)  sign bit (1 = negative)

so an all-zero block costs a single bit.
"""

from __future__ import annotations

import numpy as np


class MalformedStreamError(ValueError):
    pass


def exp_golomb_length(value: int) -> int:
    """Length in bits of the unsigned exp-Golomb code of ``value``."""
    if value < 0:
        raise ValueError(f"exp-Golomb value must be >= 0, got {value}")
    return 2 * ((value + 1).bit_length() - 1) + 1


class BitWriter:
    def __init__(self):
        self._chunks: list[str] = []
        self.length = 0

    def write_bits(self, value: int, width: int) -> None:
        if width:
            self._chunks.append(format(value, f"0{width}b"))
            self.length += width

    def write_ue(self, value: int) -> None:
        if value < 0:
            raise ValueError(f"exp-Golomb value must be >= 0, got {value}")
        code = format(value + 1, "b")
        self._chunks.append("0" * (len(code) - 1) + code)
        self.length += 2 * len(code) - 1

    def extend(self, other: "BitWriter") -> None:
        self._chunks.extend(other._chunks)
        self.length += other.length

    def bits(self) -> str:
        return "".join(self._chunks)

    def to_bytes(self) -> bytes:
        """Bits packed MSB first, zero padded to a whole byte."""
        return bits_to_bytes(self.bits())


def bits_to_bytes(bits: str) -> bytes:
    if not bits:
        return b""
    pad = (-len(bits)) % 8
    bits += "0" * pad
    return int(bits, 2).to_bytes(len(bits) // 8, "big")


class BitReader:
    def __init__(self, data: bytes | str, length: int | None = None):
        if isinstance(data, (bytes, bytearray)):
            data = format(int.from_bytes(data, "big"), f"0{8 * len(data)}b") if data else ""
        self._bits = data if length is None else data[:length]
        self.pos = 0

    @property
    def remaining(self) -> int:
        return len(self._bits) - self.pos

    def read_bits(self, width: int) -> int:
        if width == 0:
            return 0
        end = self.pos + width
        if end > len(self._bits):
            raise MalformedStreamError("read past end of stream")
        value = int(self._bits[self.pos : end], 2)
        self.pos = end
        return value

    def read_ue(self) -> int:
        start = self.pos
        one = self._bits.find("1", start)
        if one < 0:
            raise MalformedStreamError("unterminated exp-Golomb prefix")
        zeros = one - start
        end = one + zeros + 1
        if end > len(self._bits):
            raise MalformedStreamError("truncated exp-Golomb code")
        self.pos = end
        return int(self._bits[one:end], 2) - 1


def encode_levels(levels, writer: BitWriter | None = None) -> BitWriter:
    """Append the run-level code of a zig-zag ordered level vector."""
    writer = BitWriter() if writer is None else writer
    levels = np.asarray(levels)
    nz = np.flatnonzero(levels)
    writer.write_ue(len(nz))
    prev = -1
    for pos in nz.tolist():
        value = int(levels[pos])
        writer.write_ue(pos - prev - 1)
        writer.write_ue(abs(value) - 1)
        writer.write_bits(1 if value < 0 else 0, 1)
        prev = pos
    return writer


def decode_levels(reader: BitReader, size: int) -> np.ndarray:
    levels = np.zeros(size, dtype=np.int64)
    count = reader.read_ue()
    if count > size:
        raise MalformedStreamError(f"{count} nonzero levels in a block of {size}")
    pos = -1
    for _ in range(count):
        pos += reader.read_ue() + 1
        if pos >= size:
            raise MalformedStreamError("zero run runs past the end of the block")
        magnitude = reader.read_ue() + 1
        levels[pos] = -magnitude if reader.read_bits(1) else magnitude
    return levels


def level_bits(levels) -> int:
    """Exact coded size of ``encode_levels(levels)`` without building it."""
    levels = np.asarray(levels)
    nz = np.flatnonzero(levels)
    total = exp_golomb_length(len(nz))
    prev = -1
    for pos in nz.tolist():
        total += exp_golomb_length(pos - prev - 1) + exp_golomb_length(abs(int(levels[pos])) - 1) + 1
        prev = pos
    return total


def _ue_lengths(values: np.ndarray) -> np.ndarray:
    _, exponent = np.frexp(values.astype(np.float64) + 1.0)
    return 2 * (exponent.astype(np.int64) - 1) + 1


def block_bit_counts(levels: np.ndarray) -> np.ndarray:
    """Exact coded size of every block in a ``(..., n)`` array of zig-zag levels.

    Vectorized equivalent of calling :func:`level_bits` on each block.
    """
    levels = np.asarray(levels)
    flat = levels.reshape(-1, levels.shape[-1])
    blk, pos = np.nonzero(flat)
    counts = np.bincount(blk, minlength=flat.shape[0])
    prev = np.empty_like(pos)
    prev[0:1] = -1
    prev[1:] = np.where(blk[1:] == blk[:-1], pos[:-1], -1)
    per_coeff = _ue_lengths(pos - prev - 1) + _ue_lengths(np.abs(flat[blk, pos]) - 1) + 1
    bits = _ue_lengths(counts) + np.bincount(blk, weights=per_coeff, minlength=flat.shape[0]).astype(np.int64)
    return bits.reshape(levels.shape[:-1])
