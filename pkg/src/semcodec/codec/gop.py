"""Low-delay P GOP-8 QP structure."""

from __future__ import annotations

from .types import CodecError

QP_I_MIN = 14
QP_I_MAX = 37


def delta_for(qp_i: int) -> int:
    """P-frame QP offset for an intra QP: 6, 7 or 8 for [14,21], [22,29], [30,37]."""
    if not QP_I_MIN <= qp_i <= QP_I_MAX:
        raise CodecError(f"QP_I {qp_i} outside [{QP_I_MIN}, {QP_I_MAX}]")
    return 6 + (qp_i - QP_I_MIN) // 8


def frame_qp_schedule(qp_i: int, n_frames: int) -> list[int]:
    """Per-frame QPs: QP_I, then the 8-frame loop repeated.

    The loop is [QP_I+d, QP_I+d-1] x 3, QP_I+d, QP_I+2 with d = delta_for(QP_I).
    """
    if n_frames < 1:
        raise CodecError("n_frames must be >= 1")
    d = delta_for(qp_i)
    loop = [qp_i + d, qp_i + d - 1] * 3 + [qp_i + d, qp_i + 2]
    return [qp_i] + [loop[i % 8] for i in range(n_frames - 1)]
