"""Bjontegaard delta metrics between two rate / task-quality curves."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class BdError(ValueError):
    pass


@dataclass(frozen=True)
class RdPoint:
    rate: float  # bits per pixel
    quality: float  # mIoU
    label: str = ""

    def __post_init__(self):
        if not self.rate > 0:
            raise BdError(f"rate must be positive, got {self.rate}")


@dataclass
class RdCurve:
    points: list[RdPoint] = field(default_factory=list)

    def __post_init__(self):
        self.points = sorted(self.points, key=lambda p: p.rate)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def rates(self) -> np.ndarray:
        return np.array([p.rate for p in self.points])

    @property
    def qualities(self) -> np.ndarray:
        return np.array([p.quality for p in self.points])

    @property
    def usable(self) -> bool:
        """At least four points with strictly increasing rate."""
        r = self.rates
        return len(r) >= 4 and bool(np.all(np.diff(r) > 0))

    def merged(self) -> "RdCurve":
        """Collapse points with identical rate (e.g. sweeps landing on the same actions)."""
        out: list[RdPoint] = []
        for p in self.points:
            if out and out[-1].rate == p.rate:
                prev = out[-1]
                out[-1] = RdPoint(prev.rate, 0.5 * (prev.quality + p.quality), f"{prev.label}|{p.label}")
            else:
                out.append(p)
        return RdCurve(out)

    def pareto(self) -> "RdCurve":
        """Operating points only: drop any point not strictly better in quality than every cheaper one.

        Equal-rate points keep the best quality.  Dominated points are never a
        sensible encoder choice and make the cubic fit ill-conditioned.
        """
        out: list[RdPoint] = []
        for p in sorted(self.points, key=lambda p: (p.rate, -p.quality)):
            if not out or p.quality > out[-1].quality:
                out.append(p)
        return RdCurve(out)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["label", "rate_bpp", "quality_miou"])
        for p in self.points:
            w.writerow([p.label, repr(float(p.rate)), repr(float(p.quality))])
        return buf.getvalue()

    def save_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def load_csv(cls, path: str | Path) -> "RdCurve":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls([RdPoint(float(r["rate_bpp"]), float(r["quality_miou"]), r["label"]) for r in rows])

    def to_dat(self) -> str:
        """gnuplot-friendly two-column listing."""
        return "".join(f"{p.rate:.6f} {p.quality:.6f}\n" for p in self.points)


@dataclass(frozen=True)
class BdResult:
    bd_rate: float  # percent, negative means the test curve saves rate
    bd_quality: float  # mIoU delta, positive means the test curve is better

    def to_dict(self) -> dict:
        return {"bd_rate": self.bd_rate, "bd_quality": self.bd_quality}


def _check(curve: RdCurve, name: str) -> None:
    if len(curve) < 4:
        raise BdError(f"{name} curve has {len(curve)} points, need at least 4")
    if not np.all(np.diff(curve.rates) > 0):
        raise BdError(f"{name} curve rates are not strictly increasing")


def _avg_fit_difference(x1, y1, x2, y2) -> float:
    """Mean of (fit2 - fit1) over the overlap of the x ranges, cubic fits of y on x."""
    lo = max(x1.min(), x2.min())
    hi = min(x1.max(), x2.max())
    if not hi > lo:
        raise BdError(f"curves do not overlap (interval [{lo}, {hi}])")
    p1 = np.polyint(np.polyfit(x1, y1, 3))
    p2 = np.polyint(np.polyfit(x2, y2, 3))
    int1 = np.polyval(p1, hi) - np.polyval(p1, lo)
    int2 = np.polyval(p2, hi) - np.polyval(p2, lo)
    return (int2 - int1) / (hi - lo)


def bd_metric(anchor: RdCurve, test: RdCurve) -> BdResult:
    """BD-rate (percent) and BD-quality of ``test`` against ``anchor``."""
    _check(anchor, "anchor")
    _check(test, "test")
    la, lt = np.log10(anchor.rates), np.log10(test.rates)
    qa, qt = anchor.qualities, test.qualities
    if anchor is test or (np.array_equal(la, lt) and np.array_equal(qa, qt)):
        return BdResult(0.0, 0.0)
    d_log_rate = _avg_fit_difference(qa, la, qt, lt)
    d_quality = _avg_fit_difference(la, qa, lt, qt)
    return BdResult(float(100.0 * (10.0**d_log_rate - 1.0)), float(d_quality))
