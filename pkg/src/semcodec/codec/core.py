"""Block-transform coder with per-CTU QP.

Coding order is CTU raster, then 8x8 block raster inside each CTU.  Intra
blocks are predicted by the DC of the reconstructed row above and column to
the left; inter blocks by the co-located block of the reference.  Intra
reconstruction is computed in anti-diagonal wavefronts, which respects the
left/top dependency while keeping the numpy batches identical between encoder
and decoder.
"""

from __future__ import annotations

import numpy as np

from .bitio import BitReader, DecodeError, pack_ue, signed_to_code, ue_lengths
from .bitstream import Bitstream
from .transform import INV_ZIGZAG, ZIGZAG, dequantize, fdct, idct, quantize
from .types import (
    BLOCK_SIZE,
    CTU_SIZE,
    QSTEP_TABLE,
    CodecError,
    EncodeStats,
    Frame,
    FrameType,
    QpMap,
    Sequence,
    SequenceStats,
    grid_shape,
)

B = BLOCK_SIZE
BPC = CTU_SIZE // BLOCK_SIZE  # blocks per CTU side
ROUNDING = {FrameType.INTRA: 0.5 / 3.0, FrameType.INTER: 0.5 / 6.0}


def _to_blocks(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    return img.reshape(h // B, B, w // B, B).swapaxes(1, 2)


def _from_blocks(blocks: np.ndarray) -> np.ndarray:
    bh, bw = blocks.shape[:2]
    return blocks.swapaxes(1, 2).reshape(bh * B, bw * B)


def _block_steps(qp: np.ndarray) -> np.ndarray:
    """(bh, bw) quantizer step per 8x8 block from a CTU QP grid."""
    return QSTEP_TABLE[np.repeat(np.repeat(qp, BPC, axis=0), BPC, axis=1)]


def _coding_order(bh: int, bw: int) -> np.ndarray:
    """Flat block indices (row-major over the block grid) in bitstream order."""
    gh, gw = bh // BPC, bw // BPC
    cy, cx, by, bx = np.meshgrid(
        np.arange(gh), np.arange(gw), np.arange(BPC), np.arange(BPC), indexing="ij"
    )
    rows = cy * BPC + by
    cols = cx * BPC + bx
    return (rows * bw + cols).ravel()


def _reconstruct(pred: np.ndarray, levels: np.ndarray, steps: np.ndarray) -> np.ndarray:
    res = idct(dequantize(levels, steps))
    return np.clip(pred + np.floor(res + 0.5), 0, 255)


def _dc_predict(recon: np.ndarray, by: np.ndarray, bx: np.ndarray) -> np.ndarray:
    """Integer DC predictor for blocks at (by, bx) from already reconstructed pixels."""
    offs = np.arange(B)
    has_top = by > 0
    has_left = bx > 0
    top = recon[np.maximum(by * B - 1, 0)[:, None], bx[:, None] * B + offs].sum(axis=1)
    left = recon[by[:, None] * B + offs, np.maximum(bx * B - 1, 0)[:, None]].sum(axis=1)
    total = np.where(has_top, top, 0) + np.where(has_left, left, 0)
    count = B * (has_top.astype(np.int64) + has_left.astype(np.int64))
    safe = np.maximum(count, 1)
    return np.where(count > 0, (total + safe // 2) // safe, 128)


def _intra_pass(steps, rounding, source=None, levels=None, prediction=True):
    """Run the intra wavefront.

    With ``source`` given, residuals are quantized on the fly (encoder);
    otherwise ``levels`` (bh, bw, 8, 8) are used (decoder).  Returns
    (levels, recon) where recon is float64 (h, w).
    """
    bh, bw = steps.shape
    recon = np.zeros((bh * B, bw * B), dtype=np.float64)
    out_levels = np.zeros((bh, bw, B, B), dtype=np.int64) if levels is None else levels
    src_blocks = _to_blocks(source.astype(np.float64)) if source is not None else None
    rb = _to_blocks(recon)  # view into recon
    if not prediction:
        by, bx = np.divmod(np.arange(bh * bw), bw)
        waves = [(by, bx)]
    else:
        yy, xx = np.divmod(np.arange(bh * bw), bw)
        diag = yy + xx
        order = np.argsort(diag, kind="stable")
        bounds = np.searchsorted(diag[order], np.arange(bh + bw))
        waves = [
            (yy[order[a:b]], xx[order[a:b]])
            for a, b in zip(bounds[:-1], np.append(bounds[1:-1], bh * bw))
        ]
    for by, bx in waves:
        if prediction:
            pred = _dc_predict(recon, by, bx).astype(np.float64)[:, None, None]
        else:
            pred = np.full((by.size, 1, 1), 128.0)
        st = steps[by, bx][:, None, None]
        if src_blocks is not None:
            lv = quantize(fdct(src_blocks[by, bx] - pred), st, rounding)
            out_levels[by, bx] = lv
        else:
            lv = levels[by, bx]
        rb[by, bx] = _reconstruct(pred, lv, st)
    return out_levels, recon


def _symbols(levels_flat: np.ndarray):
    """Code numbers and owning block for every symbol, in bitstream order.

    ``levels_flat`` is (n_blocks, 64) in zigzag order, already in coding order.
    """
    n = levels_flat.shape[0]
    nz = levels_flat != 0
    last = np.where(nz.any(axis=1), 63 - np.argmax(nz[:, ::-1], axis=1), -1)
    count = last + 1
    per_block = count + 1
    starts = np.cumsum(per_block) - per_block
    total = int(per_block.sum())
    codes = np.empty(total, dtype=np.int64)
    is_head = np.zeros(total, dtype=bool)
    is_head[starts] = True
    codes[starts] = count
    keep = np.arange(64)[None, :] < count[:, None]
    codes[~is_head] = signed_to_code(levels_flat[keep])
    owner = np.repeat(np.arange(n), per_block)
    return codes, owner


def encode_frame(
    frame: Frame,
    reference: Frame | None,
    qp_map: QpMap,
    frame_type: FrameType | str = FrameType.INTRA,
    *,
    intra_prediction: bool = True,
) -> tuple[Bitstream, Frame, EncodeStats]:
    """Encode one frame; returns the bitstream, the reconstruction and bit counts.

    ``intra_prediction=False`` replaces DC prediction by a flat 128 predictor
    (a test mode that makes CTUs independent).
    """
    frame_type = _frame_type(frame_type)
    w, h = frame.width, frame.height
    if qp_map.qp.shape != grid_shape(w, h):
        raise CodecError(
            f"QP map grid {qp_map.qp.shape[::-1]} does not match frame {w}x{h}"
        )
    if frame_type is FrameType.INTER:
        if reference is None:
            raise CodecError("inter frame requires a reference")
        if reference.samples.shape != frame.samples.shape:
            raise CodecError("reference dimensions differ from frame")
    elif reference is not None:
        raise CodecError("intra frame takes no reference")

    steps = _block_steps(qp_map.qp)
    rounding = ROUNDING[frame_type]
    if frame_type is FrameType.INTRA:
        levels, recon = _intra_pass(
            steps, rounding, source=frame.samples, prediction=intra_prediction
        )
    else:
        pred = _to_blocks(reference.samples.astype(np.float64))
        st = steps[..., None, None]
        levels = quantize(fdct(_to_blocks(frame.samples.astype(np.float64)) - pred), st, rounding)
        recon = _from_blocks(_reconstruct(pred, levels, st))

    bh, bw = steps.shape
    order = _coding_order(bh, bw)
    flat = levels.reshape(bh * bw, 64)[order][:, ZIGZAG]
    codes, owner = _symbols(flat)
    payload, nbits = pack_ue(codes)
    block_bits = np.bincount(owner, weights=ue_lengths(codes), minlength=bh * bw)
    per_ctu = block_bits.reshape(-1, BPC * BPC).sum(axis=1).astype(np.int64)
    gh, gw = qp_map.qp.shape

    bs = Bitstream(
        width=w,
        height=h,
        frame_type=frame_type,
        base_qp=int(qp_map.qp.min()),
        qp=qp_map.qp.copy(),
        payload=payload,
        payload_bits=nbits,
        intra_prediction=intra_prediction or frame_type is FrameType.INTER,
    )
    stats = EncodeStats(w, h, bs.header_bits, per_ctu.reshape(gh, gw))
    return bs, Frame(recon.astype(np.uint8)), stats


def decode_frame(bitstream: Bitstream | bytes, reference: Frame | None = None) -> Frame:
    """Decode a frame; raises DecodeError on malformed input."""
    if not isinstance(bitstream, Bitstream):
        bitstream = Bitstream.from_bytes(bitstream)
    bs = bitstream
    if bs.frame_type is FrameType.INTER:
        if reference is None:
            raise DecodeError("inter frame requires a reference", 8)
        if reference.samples.shape != (bs.height, bs.width):
            raise DecodeError("reference dimensions differ from header", 4)

    bh, bw = bs.height // B, bs.width // B
    n = bh * bw
    reader = BitReader(bs.payload, bs.payload_bits, base_offset=bs.payload_offset)
    flat = np.zeros((n, 64), dtype=np.int64)
    for i in range(n):
        count = reader.read_ue()
        if count > 64:
            raise DecodeError(f"coefficient count {count} exceeds 64", reader.byte_offset)
        for j in range(count):
            flat[i, j] = reader.read_se()
    if reader.pos != reader.nbits:
        raise DecodeError(
            f"{reader.nbits - reader.pos} unparsed payload bits", reader.byte_offset
        )
    levels = np.empty_like(flat)
    levels[_coding_order(bh, bw)] = flat[:, INV_ZIGZAG]
    levels = levels.reshape(bh, bw, B, B)

    steps = _block_steps(bs.qp)
    if bs.frame_type is FrameType.INTRA:
        _, recon = _intra_pass(
            steps, ROUNDING[FrameType.INTRA], levels=levels, prediction=bs.intra_prediction
        )
    else:
        pred = _to_blocks(reference.samples.astype(np.float64))
        recon = _from_blocks(_reconstruct(pred, levels, steps[..., None, None]))
    return Frame(recon.astype(np.uint8))


def encode_sequence(
    seq: Sequence,
    frame_qps,
    ctu_offsets=None,
) -> tuple[list[Bitstream], list[Frame], SequenceStats]:
    """Low-delay encode: frame 0 intra, later frames predict from the previous recon.

    ``ctu_offsets`` is an optional per-frame list of (grid_h, grid_w) offset
    arrays; the effective QP saturates into [0, 51].
    """
    frame_qps = [int(q) for q in frame_qps]
    if len(frame_qps) != len(seq):
        raise CodecError(f"{len(frame_qps)} frame QPs for {len(seq)} frames")
    grid = grid_shape(seq.width, seq.height)
    if ctu_offsets is None:
        ctu_offsets = [np.zeros(grid, dtype=np.int64)] * len(seq)
    if len(ctu_offsets) != len(seq):
        raise CodecError(f"{len(ctu_offsets)} offset maps for {len(seq)} frames")

    streams, recons, stats = [], [], SequenceStats()
    prev = None
    for i, (qp, off) in enumerate(zip(frame_qps, ctu_offsets)):
        qp_map = QpMap.from_offsets(_check_qp(qp), np.asarray(off).reshape(grid))
        ft = FrameType.INTRA if i == 0 else FrameType.INTER
        bs, prev, st = encode_frame(seq[i], prev, qp_map, ft)
        streams.append(bs)
        recons.append(prev)
        stats.frames.append(st)
    return streams, recons, stats


def _check_qp(qp: int) -> int:
    if not 0 <= qp <= 51:
        raise CodecError(f"frame QP {qp} outside [0, 51]")
    return qp


def _frame_type(ft) -> FrameType:
    if isinstance(ft, str):
        try:
            return FrameType[ft.upper()]
        except KeyError:
            raise CodecError(f"unknown frame type {ft!r}") from None
    return FrameType(ft)
