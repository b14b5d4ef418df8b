"""Asymmetric integer group quantization and bit packing.

A group is a short 1-D slice of a tensor (a run of tokens within one key
channel, or a run of channels within one value row) that shares a single
(zero_point, scale) pair:

    zero_point z = min(x)
    scale      s = (max(x) - min(x)) / (2**bits - 1)
    code(x)      = clamp(round((x - z) / s), 0, 2**bits - 1)
    decode(c)    = c * s + z

which guarantees |x - decode(code(x))| <= s / 2 for every element.

Conventions fixed here and relied on by the cache and the tests:

- rounding is half-away-from-zero (arguments are non-negative, so this is
  plain floor(y + 0.5), not banker's rounding);
- codes are clamped after rounding;
- a degenerate group (max == min) gets s = 0 and all-zero codes, and
  decodes exactly to z;
- all arithmetic runs in float64 regardless of the caller's dtype;
- packed buffers are LSB-first within each byte and little-endian across
  bytes, with the final partial byte zero-padded in its unused high bits.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import CorruptBuffer, InvalidInput

__all__ = [
    "BitWidth",
    "PackedBuffer",
    "QuantizedGroup",
    "quantize_group",
    "dequantize_group",
    "quantization_error_bound",
    "pack_codes",
    "unpack_codes",
]


class BitWidth(enum.IntEnum):
    """Storage width of one cache element.

    UINT2 and UINT4 are real quantized widths; FULL (16) marks tensors kept
    in full precision and is never packed.
    """

    UINT2 = 2
    UINT4 = 4
    FULL = 16


# Widths that quantize_group / pack_codes accept.
_QUANT_WIDTHS = (BitWidth.UINT2, BitWidth.UINT4)


def _as_bitwidth(bits) -> BitWidth:
    try:
        return BitWidth(int(bits))
    except ValueError:
        raise InvalidInput(f"bit width must be one of {{2, 4, 16}}, got {bits!r}")


def _require_quant_width(bits) -> BitWidth:
    width = _as_bitwidth(bits)
    if width not in _QUANT_WIDTHS:
        raise InvalidInput(f"quantized storage supports widths 2 and 4, got {int(width)}")
    return width


@dataclass(frozen=True)
class PackedBuffer:
    """Densely packed unsigned integer codes.

    `data` holds `length` codes of `bit_width` bits each, LSB-first within
    a byte and little-endian across bytes; the tail byte is zero-padded.
    """

    data: bytes
    bit_width: BitWidth
    length: int

    def __post_init__(self):
        if self.length < 0:
            raise InvalidInput("length must be non-negative")
        expected = _packed_byte_length(self.length, self.bit_width)
        if len(self.data) != expected:
            raise CorruptBuffer(
                f"packed buffer holds {len(self.data)} bytes, expected {expected} "
                f"for {self.length} codes at {int(self.bit_width)} bits"
            )

    def __len__(self) -> int:
        return self.length


def _packed_byte_length(length: int, bits: BitWidth) -> int:
    return math.ceil(length * int(bits) / 8)


@dataclass(frozen=True)
class QuantizedGroup:
    """One quantized group: packed codes plus its affine parameters."""

    codes: PackedBuffer
    zero_point: float
    scale: float

    @property
    def bit_width(self) -> BitWidth:
        return self.codes.bit_width

    def __len__(self) -> int:
        return self.codes.length

    @classmethod
    def from_codes(cls, codes, bits, zero_point: float, scale: float) -> "QuantizedGroup":
        """Build a group from an explicit code vector (packs it on the way in)."""
        return cls(pack_codes(codes, bits), float(zero_point), float(scale))


def _round_half_away(y: np.ndarray) -> np.ndarray:
    return np.trunc(y + np.copysign(0.5, y))


def quantize_group(values, bits) -> QuantizedGroup:
    """Quantize a non-empty 1-D group of finite reals to `bits`-bit codes.

    Raises InvalidInput for an empty group, non-finite elements, or a bit
    width other than 2 or 4.
    """
    width = _require_quant_width(bits)
    x = np.asarray(values, dtype=np.float64)
    if x.ndim != 1:
        raise InvalidInput(f"a group is 1-D, got shape {x.shape}")
    if x.size == 0:
        raise InvalidInput("cannot quantize an empty group")
    if not np.all(np.isfinite(x)):
        raise InvalidInput("group contains non-finite elements")

    zero_point = float(x.min())
    levels = 2 ** int(width) - 1
    scale = (float(x.max()) - zero_point) / levels
    if scale == 0.0:
        codes = np.zeros(x.size, dtype=np.uint8)
    else:
        codes = _round_half_away((x - zero_point) / scale)
        codes = np.clip(codes, 0, levels).astype(np.uint8)
    return QuantizedGroup(pack_codes(codes, width), zero_point, scale)


def dequantize_group(group: QuantizedGroup) -> np.ndarray:
    """Decode a group back to float64: code * scale + zero_point."""
    codes = unpack_codes(group.codes)
    return codes.astype(np.float64) * group.scale + group.zero_point


def quantization_error_bound(group: QuantizedGroup) -> float:
    """Worst-case absolute reconstruction error for any element of the group."""
    return group.scale / 2.0


def pack_codes(codes, bits) -> PackedBuffer:
    """Pack a vector of codes (each < 2**bits) into a PackedBuffer.

    Element 0 occupies the lowest-order bits of byte 0; within every code
    the LSB comes first; the final partial byte is zero-padded high.
    """
    width = _require_quant_width(bits)
    arr = np.asarray(codes)
    if arr.ndim != 1:
        arr = arr.reshape(-1)
    if arr.size == 0:
        return PackedBuffer(b"", width, 0)
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(arr == np.trunc(arr)):
            raise InvalidInput("codes must be integers")
        arr = arr.astype(np.int64)
    if arr.min() < 0 or arr.max() >= 2 ** int(width):
        raise InvalidInput(f"codes out of range for {int(width)}-bit storage")

    arr = arr.astype(np.uint8)
    shifts = np.arange(int(width), dtype=np.uint8)
    bitstream = ((arr[:, None] >> shifts) & 1).reshape(-1)
    packed = np.packbits(bitstream, bitorder="little")
    return PackedBuffer(packed.tobytes(), width, int(arr.size))


def unpack_codes(buffer: PackedBuffer) -> np.ndarray:
    """Invert pack_codes, returning a uint8 vector of length buffer.length."""
    width = int(buffer.bit_width)
    # PackedBuffer validates byte length at construction; re-check so that
    # buffers built by other means still fail loudly here.
    expected = _packed_byte_length(buffer.length, buffer.bit_width)
    if len(buffer.data) != expected:
        raise CorruptBuffer(
            f"packed buffer holds {len(buffer.data)} bytes, expected {expected}"
        )
    if buffer.length == 0:
        return np.zeros(0, dtype=np.uint8)
    raw = np.frombuffer(buffer.data, dtype=np.uint8)
    bits = np.unpackbits(raw, bitorder="little")[: buffer.length * width]
    weights = (1 << np.arange(width, dtype=np.uint8)).astype(np.uint8)
    return (bits.reshape(buffer.length, width) * weights).sum(axis=1).astype(np.uint8)
