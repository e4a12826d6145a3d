"""Container layout for one coded frame.

    magic      4 bytes  b"SMC1"
    width      u16
    height     u16
    frame_type u8       bit 0..6 = FrameType, bit 7 = intra prediction disabled
    base_qp    u8
    grid_w     u16
    grid_h     u16
    offsets    i8 * grid_w * grid_h   (CTU raster order, qp - base_qp)
    nbits      u32      exact payload length in bits
    payload    ceil(nbits / 8) bytes

All multi-byte fields are little endian.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .bitio import DecodeError
from .types import CTU_SIZE, QP_MAX, QP_MIN, FrameType, grid_shape

MAGIC = b"SMC1"
_FIXED = struct.Struct("<4sHHBBHH")
_NBITS = struct.Struct("<I")
NO_PRED_FLAG = 0x80


@dataclass
class Bitstream:
    width: int
    height: int
    frame_type: FrameType
    base_qp: int
    qp: np.ndarray  # (grid_h, grid_w) absolute QP per CTU
    payload: bytes
    payload_bits: int
    intra_prediction: bool = True

    @property
    def header_bytes(self) -> int:
        return _FIXED.size + self.qp.size + _NBITS.size

    @property
    def header_bits(self) -> int:
        return 8 * self.header_bytes

    def to_bytes(self) -> bytes:
        ft = int(self.frame_type)
        if not self.intra_prediction:
            ft |= NO_PRED_FLAG
        gh, gw = self.qp.shape
        offsets = (self.qp - self.base_qp).astype(np.int8)
        return b"".join(
            [
                _FIXED.pack(MAGIC, self.width, self.height, ft, self.base_qp, gw, gh),
                offsets.tobytes(),
                _NBITS.pack(self.payload_bits),
                self.payload,
            ]
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "Bitstream":
        if len(data) < _FIXED.size:
            raise DecodeError("container shorter than fixed header", len(data))
        magic, w, h, ft, base, gw, gh = _FIXED.unpack_from(data, 0)
        if magic != MAGIC:
            raise DecodeError(f"bad magic {magic!r}", 0)
        if w == 0 or h == 0 or w % CTU_SIZE or h % CTU_SIZE:
            raise DecodeError(f"invalid dimensions {w}x{h}", 4)
        if (gh, gw) != grid_shape(w, h):
            raise DecodeError(
                f"CTU grid {gw}x{gh} does not match dimensions {w}x{h}", 10
            )
        try:
            frame_type = FrameType(ft & ~NO_PRED_FLAG)
        except ValueError:
            raise DecodeError(f"unknown frame type {ft}", 8) from None
        pos = _FIXED.size
        n = gw * gh
        if len(data) < pos + n + _NBITS.size:
            raise DecodeError("header truncated", len(data))
        offsets = np.frombuffer(data, dtype=np.int8, count=n, offset=pos).astype(np.int64)
        qp = (base + offsets).reshape(gh, gw)
        if qp.min() < QP_MIN or qp.max() > QP_MAX:
            raise DecodeError("CTU QP out of range", pos)
        pos += n
        (nbits,) = _NBITS.unpack_from(data, pos)
        pos += _NBITS.size
        payload = bytes(data[pos:])
        if len(payload) != -(-nbits // 8):
            raise DecodeError(
                f"payload holds {len(payload)} bytes, header declares {nbits} bits",
                pos + min(len(payload), -(-nbits // 8)),
            )
        return cls(
            width=w,
            height=h,
            frame_type=frame_type,
            base_qp=base,
            qp=qp,
            payload=payload,
            payload_bits=nbits,
            intra_prediction=not (ft & NO_PRED_FLAG),
        )

    @property
    def payload_offset(self) -> int:
        return self.header_bytes
