from .bitio import DecodeError
from .bitstream import Bitstream
from .core import decode_frame, encode_frame, encode_sequence
from .gop import delta_for, frame_qp_schedule
from .types import (
    CTU_SIZE,
    QP_MAX,
    QP_MIN,
    CodecError,
    EncodeStats,
    Frame,
    FrameType,
    QpMap,
    Sequence,
    SequenceStats,
    grid_shape,
    qstep,
)

__all__ = [
    "Bitstream",
    "CTU_SIZE",
    "CodecError",
    "DecodeError",
    "EncodeStats",
    "Frame",
    "FrameType",
    "QP_MAX",
    "QP_MIN",
    "QpMap",
    "Sequence",
    "SequenceStats",
    "decode_frame",
    "delta_for",
    "encode_frame",
    "encode_sequence",
    "frame_qp_schedule",
    "grid_shape",
    "qstep",
]
