from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

CTU_SIZE = 64
BLOCK_SIZE = 8
QP_MIN = 0
QP_MAX = 51


class CodecError(ValueError):
    """Invalid input to the codec (dimensions, QP range, frame type)."""


class FrameType(enum.IntEnum):
    INTRA = 0
    INTER = 1


def qstep(qp: int) -> float:
    """Quantizer step size; doubles every 6 QP and equals 1.0 at QP 4."""
    if isinstance(qp, (bool, np.bool_)) or int(qp) != qp:
        raise CodecError(f"QP must be an integer, got {qp!r}")
    if not QP_MIN <= qp <= QP_MAX:
        raise CodecError(f"QP {qp} outside [{QP_MIN}, {QP_MAX}]")
    return 2.0 ** ((int(qp) - 4) / 6.0)


# per-QP step table so vectorised lookups match qstep() bit for bit
QSTEP_TABLE = np.array([qstep(q) for q in range(QP_MIN, QP_MAX + 1)], dtype=np.float64)


def _check_dims(width: int, height: int) -> None:
    if width <= 0 or height <= 0 or width % CTU_SIZE or height % CTU_SIZE:
        raise CodecError(
            f"frame dimensions {width}x{height} are not positive multiples of {CTU_SIZE}"
        )


@dataclass(frozen=True)
class Frame:
    """One 8-bit grayscale picture, stored as a (height, width) uint8 array."""

    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples)
        if s.ndim != 2:
            raise CodecError(f"frame samples must be 2-D, got shape {s.shape}")
        if s.dtype != np.uint8:
            if s.size and (s.min() < 0 or s.max() > 255):
                raise CodecError("frame samples must lie in [0, 255]")
            s = s.astype(np.uint8)
        _check_dims(s.shape[1], s.shape[0])
        object.__setattr__(self, "samples", s)

    @property
    def width(self) -> int:
        return self.samples.shape[1]

    @property
    def height(self) -> int:
        return self.samples.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Frame):
            return NotImplemented
        return self.samples.shape == other.samples.shape and bool(
            np.array_equal(self.samples, other.samples)
        )

    __hash__ = None


@dataclass
class Sequence:
    """An ordered stack of frames sharing one size: ``frames`` is (n, h, w) uint8."""

    frames: np.ndarray
    name: str = "seq"

    def __post_init__(self):
        f = np.asarray(self.frames)
        if f.ndim == 2:
            f = f[None]
        if f.ndim != 3 or f.shape[0] < 1:
            raise CodecError(f"sequence needs shape (n, h, w) with n >= 1, got {f.shape}")
        _check_dims(f.shape[2], f.shape[1])
        self.frames = np.ascontiguousarray(f, dtype=np.uint8)

    def __len__(self) -> int:
        return self.frames.shape[0]

    def __getitem__(self, i: int) -> Frame:
        return Frame(self.frames[i])

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def manifest(self) -> dict:
        return {
            "name": self.name,
            "frame_count": len(self),
            "width": self.width,
            "height": self.height,
        }


def grid_shape(width: int, height: int) -> tuple[int, int]:
    """CTU grid as (grid_h, grid_w)."""
    return -(-height // CTU_SIZE), -(-width // CTU_SIZE)


@dataclass
class QpMap:
    """Per-CTU integer QP, stored as a (grid_h, grid_w) array."""

    qp: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.qp)
        if q.ndim != 2:
            raise CodecError(f"QP map must be 2-D, got shape {q.shape}")
        if not np.issubdtype(q.dtype, np.integer):
            if not np.array_equal(q, np.round(q)):
                raise CodecError("QP map entries must be integers")
        q = q.astype(np.int64)
        if q.size and (q.min() < QP_MIN or q.max() > QP_MAX):
            raise CodecError(f"QP map entries outside [{QP_MIN}, {QP_MAX}]")
        self.qp = q

    @classmethod
    def uniform(cls, width: int, height: int, qp: int) -> "QpMap":
        return cls(np.full(grid_shape(width, height), qp, dtype=np.int64))

    @classmethod
    def from_offsets(cls, frame_qp: int, offsets) -> "QpMap":
        """Frame QP plus per-CTU offsets, saturated into the legal range."""
        offsets = np.asarray(offsets, dtype=np.int64)
        return cls(np.clip(frame_qp + offsets, QP_MIN, QP_MAX))

    @property
    def grid_w(self) -> int:
        return self.qp.shape[1]

    @property
    def grid_h(self) -> int:
        return self.qp.shape[0]


@dataclass
class EncodeStats:
    width: int
    height: int
    header_bits: int
    per_ctu_bits: np.ndarray

    @property
    def payload_bits(self) -> int:
        return int(self.per_ctu_bits.sum())

    @property
    def total_bits(self) -> int:
        return self.header_bits + self.payload_bits

    @property
    def bpp(self) -> float:
        return self.total_bits / (self.width * self.height)


@dataclass
class SequenceStats:
    """Aggregate over the frames of one sequence encode."""

    frames: list[EncodeStats] = field(default_factory=list)

    @property
    def total_bits(self) -> int:
        return sum(s.total_bits for s in self.frames)

    @property
    def pixels(self) -> int:
        return sum(s.width * s.height for s in self.frames)

    @property
    def bpp(self) -> float:
        return self.total_bits / self.pixels
