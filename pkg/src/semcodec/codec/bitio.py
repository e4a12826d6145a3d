"""Exp-Golomb (k=0) bit packing and parsing.

The writer works on whole symbol arrays at once: every symbol is turned into
a (codeword, length) pair and the bits are expanded with numpy before being
packed.  The reader is a plain cursor over an unpacked bit array, with a
precomputed "next set bit" table so each ue(v) costs O(1) python operations.
"""

from __future__ import annotations

import numpy as np


class DecodeError(Exception):
    """Raised when a bitstream cannot be parsed.

    ``offset`` is the byte offset into the container where parsing failed.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def ue_lengths(code_num: np.ndarray) -> np.ndarray:
    """Bit length of the unsigned exp-Golomb code of each value."""
    code_num = np.asarray(code_num, dtype=np.int64)
    # floor(log2(n + 1)) computed exactly on integers
    nbits = np.zeros(code_num.shape, dtype=np.int64)
    v = code_num + 1
    while True:
        mask = v > 1
        if not mask.any():
            break
        nbits[mask] += 1
        v = np.where(mask, v >> 1, v)
    return 2 * nbits + 1


def signed_to_code(values: np.ndarray) -> np.ndarray:
    """Map signed integers to exp-Golomb code numbers: 0,1,-1,2,-2 -> 0,1,2,3,4."""
    values = np.asarray(values, dtype=np.int64)
    return np.where(values > 0, 2 * values - 1, -2 * values)


def code_to_signed(code: int) -> int:
    if code & 1:
        return (code + 1) >> 1
    return -(code >> 1)


def pack_ue(code_num: np.ndarray) -> tuple[bytes, int]:
    """Pack a sequence of ue(v) code numbers into bytes.

    Returns the packed bytes (zero padded to a byte boundary) and the exact
    number of meaningful bits.
    """
    code_num = np.asarray(code_num, dtype=np.int64).ravel()
    if code_num.size == 0:
        return b"", 0
    lengths = ue_lengths(code_num)
    total = int(lengths.sum())
    starts = np.cumsum(lengths) - lengths
    sym = np.repeat(np.arange(code_num.size), lengths)
    pos = np.arange(total, dtype=np.int64) - starts[sym]
    shift = lengths[sym] - 1 - pos
    word = code_num[sym] + 1
    bits = ((word >> np.minimum(shift, 62)) & 1).astype(np.uint8)
    # shifts beyond the codeword width are leading zeros
    bits[shift > 62] = 0
    return np.packbits(bits).tobytes(), total


class BitReader:
    """Sequential reader over a packed payload.

    ``base_offset`` is added to the byte offsets reported in errors so that
    they refer to positions in the enclosing container.
    """

    def __init__(self, data: bytes, nbits: int, base_offset: int = 0):
        if nbits > 8 * len(data):
            raise DecodeError(
                f"payload declares {nbits} bits but only {8 * len(data)} are present",
                base_offset + len(data),
            )
        self.bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8))[:nbits]
        self.nbits = nbits
        self.pos = 0
        self.base_offset = base_offset
        ones = np.flatnonzero(self.bits)
        # next_one[i] = index of the first set bit at or after i (nbits if none)
        idx = np.searchsorted(ones, np.arange(nbits + 1))
        self._next_one = np.append(ones, nbits)[idx].tolist()
        self._bits = self.bits.tolist()

    @property
    def byte_offset(self) -> int:
        return self.base_offset + self.pos // 8

    def read_ue(self) -> int:
        p = self.pos
        one = self._next_one[p]
        if one >= self.nbits:
            raise DecodeError("truncated exp-Golomb prefix", self.byte_offset)
        zeros = one - p
        end = one + 1 + zeros
        if end > self.nbits:
            raise DecodeError("truncated exp-Golomb suffix", self.byte_offset)
        value = 1
        for b in self._bits[one + 1 : end]:
            value = (value << 1) | b
        self.pos = end
        return value - 1

    def read_se(self) -> int:
        return code_to_signed(self.read_ue())
