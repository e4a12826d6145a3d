"""Rate / task-quality sweeps: constant-QP anchor, learned policy and hand-crafted QP maps."""

from __future__ import annotations

import numpy as np

from ..codec import QP_MAX, QP_MIN, QpMap, encode_sequence
from ..codec.gop import QP_I_MAX, QP_I_MIN, delta_for, frame_qp_schedule
from ..semantics import CtuLabels, iou_array, segment_array
from .bd import BdError, RdCurve, RdPoint

ANCHOR_MODES = ("gop", "flat")
HANDCRAFTED_KINDS = ("linear", "exp", "square", "log", "sqrt")
DEFAULT_SPAN = 8
ANCHOR_QPS = tuple(range(12, 43, 5))
# lambda grid for BD evaluation: dense enough that the fitted curve has several distinct operating points
SWEEP_LAMBDAS = (0.0, 0.5, 1.0, 2.0, 3.0, 5.0, 7.0, 10.0, 14.0, 20.0, 30.0, 50.0, 70.0, 100.0)

_KIND_FN = {
    "linear": lambda x: x,
    "exp": lambda x: np.expm1(x) / np.expm1(1.0),
    "square": lambda x: x * x,
    "log": lambda x: np.log1p(x) / np.log(2.0),
    "sqrt": np.sqrt,
}


def anchor_schedule(qp: int, n_frames: int, mode: str = "gop") -> list[int]:
    """Per-frame QPs of the constant-QP anchor.

    ``gop`` keeps the low-delay cascade of the learned codec (QP offsets are
    clamped to the end bins outside [14, 37]); ``flat`` uses ``qp`` everywhere.
    """
    if not QP_MIN <= qp <= QP_MAX:
        raise BdError(f"anchor QP {qp} outside [{QP_MIN}, {QP_MAX}]")
    if mode == "flat":
        return [qp] * n_frames
    if mode != "gop":
        raise BdError(f"unknown anchor mode {mode!r}; valid: {list(ANCHOR_MODES)}")
    if QP_I_MIN <= qp <= QP_I_MAX:
        return frame_qp_schedule(qp, n_frames)
    d = delta_for(QP_I_MIN if qp < QP_I_MIN else QP_I_MAX)
    loop = [qp + d, qp + d - 1] * 3 + [qp + d, qp + 2]
    return [qp] + [min(QP_MAX, loop[i % 8]) for i in range(n_frames - 1)]


class SweepSet:
    """Sequences with their original-frame segmentations cached."""

    def __init__(self, seqs):
        from ..training import prepare

        self.preps = prepare(seqs)
        if not self.preps:
            raise BdError("empty sequence set")

    def __len__(self) -> int:
        return len(self.preps)

    def point(self, label: str, qps_for, offsets_for=None) -> RdPoint:
        """Encode every sequence and average bpp and mIoU (over all frames of all sequences)."""
        bpps, q = [], []
        for p in self.preps:
            qps = qps_for(p)
            offs = None if offsets_for is None else offsets_for(p, qps)
            _, recons, stats = encode_sequence(p.seq, qps, offs)
            bpps.append(stats.bpp)
            q.append(np.mean([iou_array(segment_array(r.samples), m) for r, m in zip(recons, p.masks)]))
        return RdPoint(float(np.mean(bpps)), float(np.mean(q)), label)


def _as_set(seq_set) -> SweepSet:
    return seq_set if isinstance(seq_set, SweepSet) else SweepSet(seq_set)


def _check_qps(qps) -> list[int]:
    qps = [int(q) for q in qps]
    if not qps:
        raise BdError("empty QP list")
    if len(set(qps)) != len(qps):
        raise BdError(f"duplicate QPs in {qps}")
    return qps


def anchor_sweep(seq_set, qps, mode: str = "gop") -> RdCurve:
    """Zero-offset encodes at each QP; one point per QP."""
    ss = _as_set(seq_set)
    qps = _check_qps(qps)
    for q in qps:
        anchor_schedule(q, 1, mode)
    return RdCurve([ss.point(f"qp={q}", lambda p, q=q: anchor_schedule(q, p.n_frames, mode)) for q in qps])


def handcrafted_offsets(ratio: np.ndarray, kind: str, qp_span: int = DEFAULT_SPAN) -> np.ndarray:
    """Integer QP offsets round(span * f(1 - ratio)) with round-half-up."""
    if kind not in _KIND_FN:
        raise BdError(f"unknown hand-crafted kind {kind!r}; valid: {list(HANDCRAFTED_KINDS)}")
    if qp_span < 0:
        raise BdError(f"qp_span must be >= 0, got {qp_span}")
    x = 1.0 - np.clip(np.asarray(ratio, dtype=np.float64), 0.0, 1.0)
    return np.floor(qp_span * _KIND_FN[kind](x) + 0.5).astype(np.int64)


def handcrafted_qp_map(labels: CtuLabels, frame_qp: int, kind: str, qp_span: int = DEFAULT_SPAN) -> QpMap:
    """Less semantic coverage gives a higher QP; fully covered CTUs keep the frame QP."""
    return QpMap.from_offsets(frame_qp, handcrafted_offsets(labels.ratio, kind, qp_span))


def baseline_sweep(seq_set, kinds, frame_qps, qp_span: int = DEFAULT_SPAN, mode: str = "gop") -> dict[str, RdCurve]:
    """One curve per hand-crafted kind over the anchor QPs."""
    kinds = list(kinds)
    if len(set(kinds)) != len(kinds):
        raise BdError(f"duplicate kinds in {kinds}")
    for k in kinds:
        handcrafted_offsets(np.zeros(1), k, qp_span)
    ss = _as_set(seq_set)
    qps = _check_qps(frame_qps)
    out = {}
    for kind in kinds:

        def offs(p, _qps, kind=kind):
            per = handcrafted_offsets(p.ratio, kind, qp_span).reshape(p.n_frames, *p.grid)
            return list(per)

        out[kind] = RdCurve(
            [ss.point(f"{kind}:qp={q}", lambda p, q=q: anchor_schedule(q, p.n_frames, mode), offs) for q in qps]
        )
    return out


def policy_sweep(ckpt, seq_set, lambdas, bpp_norm: float | None = None) -> RdCurve:
    """Greedy episodes per lambda; one point per lambda (may be unusable for BD if too short)."""
    from ..training import RewardConfig, run_episode

    lambdas = [float(x) for x in lambdas]
    if not lambdas:
        raise BdError("empty lambda list")
    if len(set(lambdas)) != len(lambdas):
        raise BdError(f"duplicate lambdas in {lambdas}")
    ss = _as_set(seq_set)
    norm = bpp_norm if bpp_norm is not None else float(ckpt.meta.get("bpp_norm", 1.0))
    pts = []
    for lam in lambdas:
        eps = [run_episode(p, ckpt, RewardConfig(lam, norm), "greedy") for p in ss.preps]
        pts.append(
            RdPoint(
                float(np.mean([e.bpp for e in eps])),
                float(np.mean([1.0 - e.mean_distortion for e in eps])),
                f"lambda={lam:g}",
            )
        )
    return RdCurve(pts)
