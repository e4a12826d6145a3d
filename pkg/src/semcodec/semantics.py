"""Diagnosis surrogate: a fixed classical segmenter, mIoU scoring and CTU labels."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .codec.types import CTU_SIZE, Frame

BLUR_SIGMA = 1.0
BLUR_RADIUS = 2  # 5x5 support
TOPHAT_SIZE = 7
THRESHOLD_K = 1.5
MIN_COMPONENT = 20
FG_THRESHOLD = 0.01

_FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


@dataclass
class SemanticMask:
    bits: np.ndarray  # (h, w) bool

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool)
        if self.bits.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {self.bits.shape}")

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    def __eq__(self, other):
        if not isinstance(other, SemanticMask):
            return NotImplemented
        return self.bits.shape == other.bits.shape and bool(np.array_equal(self.bits, other.bits))

    __hash__ = None


@dataclass
class CtuLabels:
    ratio: np.ndarray  # (grid_h, grid_w) float in [0, 1]
    foreground: np.ndarray  # (grid_h, grid_w) bool

    @property
    def grid_w(self) -> int:
        return self.ratio.shape[1]

    @property
    def grid_h(self) -> int:
        return self.ratio.shape[0]


def _as_array(x) -> np.ndarray:
    if isinstance(x, Frame):
        return x.samples
    if isinstance(x, SemanticMask):
        return x.bits
    return np.asarray(x)


def segment_array(img: np.ndarray) -> np.ndarray:
    """Segment a (h, w) luma array; returns a bool mask."""
    x = np.asarray(img, dtype=np.float64)
    blurred = ndimage.gaussian_filter(x, BLUR_SIGMA, mode="nearest", truncate=BLUR_RADIUS / BLUR_SIGMA)
    enhanced = ndimage.white_tophat(blurred, size=TOPHAT_SIZE, mode="nearest")
    thr = enhanced.mean() + THRESHOLD_K * enhanced.std()
    mask = enhanced > thr
    if not mask.any():
        return mask
    labels, n = ndimage.label(mask, structure=_FOUR_CONNECTED)
    sizes = np.bincount(labels.ravel(), minlength=n + 1)
    keep = sizes >= MIN_COMPONENT
    keep[0] = False
    return keep[labels]


def segment(frame: Frame) -> SemanticMask:
    """Blur, top-hat enhance, threshold at mean + 1.5 std, drop components under 20 px."""
    return SemanticMask(segment_array(_as_array(frame)))


def iou_array(pred: np.ndarray, truth: np.ndarray) -> float:
    if pred.shape != truth.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {truth.shape}")
    union = np.count_nonzero(pred | truth)
    if union == 0:
        return 1.0
    return np.count_nonzero(pred & truth) / union


def miou(pred: SemanticMask, truth: SemanticMask) -> float:
    """Foreground intersection over union; two empty masks score 1.0."""
    return iou_array(_as_array(pred).astype(bool), _as_array(truth).astype(bool))


def task_distortion(recon: Frame, original: Frame) -> float:
    """1 - mIoU between the segmentations of ``recon`` and ``original``."""
    r, o = _as_array(recon), _as_array(original)
    if r.shape != o.shape:
        raise ValueError(f"frame shapes differ: {r.shape} vs {o.shape}")
    return 1.0 - iou_array(segment_array(r), segment_array(o))


def ctu_ratios(mask: np.ndarray, ctu_size: int = CTU_SIZE) -> np.ndarray:
    m = np.asarray(mask, dtype=np.float64)
    h, w = m.shape
    gh, gw = -(-h // ctu_size), -(-w // ctu_size)
    padded = np.zeros((gh * ctu_size, gw * ctu_size))
    padded[:h, :w] = m
    sums = padded.reshape(gh, ctu_size, gw, ctu_size).sum(axis=(1, 3))
    # partial CTUs at the border are normalised by their real pixel count
    ys = np.minimum(ctu_size, h - np.arange(gh) * ctu_size)
    xs = np.minimum(ctu_size, w - np.arange(gw) * ctu_size)
    return sums / np.outer(ys, xs)


def ctu_labels(mask: SemanticMask, ctu_size: int = CTU_SIZE, fg_threshold: float = FG_THRESHOLD) -> CtuLabels:
    if not 0.0 <= fg_threshold <= 1.0:
        raise ValueError(f"fg_threshold {fg_threshold} outside [0, 1]")
    ratio = ctu_ratios(_as_array(mask), ctu_size)
    return CtuLabels(ratio=ratio, foreground=ratio >= fg_threshold)


def save_mask(mask: SemanticMask, path: str | Path) -> None:
    """Write ``<path>.mask`` (1 bit per pixel, MSB first) plus a JSON manifest."""
    path = Path(path)
    path.with_suffix(".mask").write_bytes(np.packbits(mask.bits.ravel()).tobytes())
    meta = {"width": mask.width, "height": mask.height, "frames": 1}
    path.with_suffix(".mask.json").write_text(json.dumps(meta, sort_keys=True))


def load_mask(path: str | Path) -> SemanticMask:
    path = Path(path)
    meta = json.loads(path.with_suffix(".mask.json").read_text())
    n = meta["width"] * meta["height"]
    raw = np.frombuffer(path.with_suffix(".mask").read_bytes(), dtype=np.uint8)
    if raw.size != -(-n // 8):
        raise ValueError(f"{path}: expected {-(-n // 8)} mask bytes, found {raw.size}")
    return SemanticMask(np.unpackbits(raw)[:n].reshape(meta["height"], meta["width"]))


def write_pgm(mask: SemanticMask, path: str | Path) -> None:
    """Binary PGM export, foreground = 255."""
    img = mask.bits.astype(np.uint8) * 255
    header = f"P5\n{mask.width} {mask.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + img.tobytes())
