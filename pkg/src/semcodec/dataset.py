"""Synthetic phantom corpora and raw sequence I/O.

Domain B: dark textured background with thin bright curvilinear vessels.
Domain A: the same machinery with compact bright blobs, stronger contrast and
a finer texture, so the two domains are shifted by construction.

Shapes are rasterised once on a 4x supersampled canvas; each frame is a crop
of that canvas at a drifting offset, and ground truth is the 4x4 majority
vote of the supersampled coverage.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .codec.types import CTU_SIZE, Sequence

SS = 4  # supersampling factor per axis

DOMAIN_DEFAULTS = {
    "A": dict(
        background=30.0,
        texture=((16, 24.0), (8, 8.0)),
        noise_sigma=5.0,
        n_vessels=120,
        vessel_width_range=(5.0, 8.0),
        intensity_range=(100.0, 160.0),
        organs=0,
        organ_radius=(40.0, 120.0),
        organ_contrast=(15.0, 35.0),
    ),
    "B": dict(
        background=40.0,
        texture=((64, 24.0), (32, 12.0), (16, 10.0)),
        noise_sigma=3.0,
        n_vessels=4,
        vessel_width_range=(2.5, 5.0),
        intensity_range=(60.0, 120.0),
        organs=8,
        organ_radius=(40.0, 120.0),
        organ_contrast=(15.0, 35.0),
    ),
}


class DatasetError(ValueError):
    pass


@dataclass
class PhantomConfig:
    """Generator settings; ``None`` fields take the domain default."""

    seed: int = 0
    width: int = 512
    height: int = 512
    n_frames: int = 33
    domain: str = "B"
    noise_sigma: float | None = None
    n_vessels: int | None = None
    vessel_width_range: tuple[float, float] | None = None
    drift_px_per_frame: float = 0.5

    def resolved(self) -> dict:
        if self.domain not in DOMAIN_DEFAULTS:
            raise DatasetError(f"unknown domain {self.domain!r}")
        if self.width <= 0 or self.height <= 0 or self.width % CTU_SIZE or self.height % CTU_SIZE:
            raise DatasetError(
                f"phantom dimensions {self.width}x{self.height} must be positive multiples of {CTU_SIZE}"
            )
        if self.n_frames < 1:
            raise DatasetError("n_frames must be >= 1")
        d = dict(DOMAIN_DEFAULTS[self.domain])
        # default counts are per 512x512; vessels scale with side, blobs with area
        scale = (self.width * self.height) / (512.0 * 512.0)
        if self.domain == "B":
            scale = math.sqrt(scale)
        d["n_vessels"] = max(1, int(round(d["n_vessels"] * scale)))
        d["organs"] = int(round(d["organs"] * (self.width * self.height) / (512.0 * 512.0)))
        for key in ("noise_sigma", "n_vessels", "vessel_width_range"):
            if getattr(self, key) is not None:
                d[key] = getattr(self, key)
        d["vessel_width_range"] = tuple(float(v) for v in d["vessel_width_range"])
        return d


@dataclass
class GroundTruth:
    masks: np.ndarray  # (n, h, w) bool


def _hash01(ix: np.ndarray, iy: np.ndarray, salt: int) -> np.ndarray:
    """Integer lattice hash to [0, 1); pure uint64 arithmetic, platform independent."""
    m = np.uint64(0xFFFFFFFF)
    h = (ix.astype(np.uint64) * np.uint64(0x9E3779B1)) & m
    h ^= (iy.astype(np.uint64) * np.uint64(0x85EBCA77)) & m
    h ^= np.uint64(salt & 0xFFFFFFFF)
    h = (h ^ (h >> np.uint64(16))) * np.uint64(0x7FEB352D) & m
    h = (h ^ (h >> np.uint64(15))) * np.uint64(0x846CA68B) & m
    h ^= h >> np.uint64(16)
    return h.astype(np.float64) / 4294967296.0


def value_noise(x: np.ndarray, y: np.ndarray, cell: int, salt: int) -> np.ndarray:
    """Smooth lattice noise in [-1, 1] with the given cell size in pixels."""
    fx, fy = x / cell, y / cell
    x0, y0 = np.floor(fx), np.floor(fy)
    tx, ty = fx - x0, fy - y0
    sx, sy = tx * tx * (3 - 2 * tx), ty * ty * (3 - 2 * ty)
    x0 = x0.astype(np.int64) + (1 << 20)
    y0 = y0.astype(np.int64) + (1 << 20)
    v00 = _hash01(x0, y0, salt)
    v10 = _hash01(x0 + 1, y0, salt)
    v01 = _hash01(x0, y0 + 1, salt)
    v11 = _hash01(x0 + 1, y0 + 1, salt)
    top = v00 + (v10 - v00) * sx
    bot = v01 + (v11 - v01) * sx
    return 2.0 * (top + (bot - top) * sy) - 1.0


def _vessel_curves(rng, n: int, w: float, h: float, margin: float) -> list[np.ndarray]:
    """Cubic Bezier centrelines confined to one disk-shaped region of interest."""
    r = 0.3 * min(w - 2 * margin, h - 2 * margin)
    cx = rng.uniform(margin + r, w - margin - r)
    cy = rng.uniform(margin + r, h - margin - r)
    curves = []
    for _ in range(n):
        a0 = rng.uniform(0, 2 * math.pi)
        a1 = a0 + rng.uniform(0.6, 1.4) * math.pi
        p0 = np.array([cx + r * math.cos(a0), cy + r * math.sin(a0)])
        p3 = np.array([cx + r * math.cos(a1), cy + r * math.sin(a1)])
        rho = r * np.sqrt(rng.uniform(0, 1, 2))
        phi = rng.uniform(0, 2 * math.pi, 2)
        p1 = np.array([cx + rho[0] * math.cos(phi[0]), cy + rho[0] * math.sin(phi[0])])
        p2 = np.array([cx + rho[1] * math.cos(phi[1]), cy + rho[1] * math.sin(phi[1])])
        length = sum(np.hypot(*(b - a)) for a, b in ((p0, p1), (p1, p2), (p2, p3)))
        t = np.linspace(0.0, 1.0, max(16, int(length * 2 * SS)))[:, None]
        pts = ((1 - t) ** 3) * p0 + 3 * ((1 - t) ** 2) * t * p1 + 3 * (1 - t) * t * t * p2 + (t**3) * p3
        curves.append(pts)
    return curves


def _rasterize_vessels(rng, n, width_range, intensity_range, cw, ch, margin=0):
    """Supersampled (ch*SS, cw*SS) intensity layer and coverage mask."""
    H, W = ch * SS, cw * SS
    seeds = np.zeros((H, W), dtype=bool)
    owner = np.full((H, W), -1, dtype=np.int64)
    radii, levels = [], []
    for i, pts in enumerate(_vessel_curves(rng, n, cw, ch, margin)):
        radii.append(0.5 * rng.uniform(*width_range) * SS)
        levels.append(rng.uniform(*intensity_range))
        # centreline points in supersampled pixel-centre coordinates
        sp = np.floor(pts * SS).astype(np.int64)
        ok = (sp[:, 0] >= 0) & (sp[:, 0] < W) & (sp[:, 1] >= 0) & (sp[:, 1] < H)
        sp = sp[ok]
        seeds[sp[:, 1], sp[:, 0]] = True
        owner[sp[:, 1], sp[:, 0]] = i
    inside = np.zeros((H, W), dtype=bool)
    layer = np.zeros((H, W), dtype=np.float64)
    if not radii:
        return layer, inside
    dist, (iy, ix) = ndimage.distance_transform_edt(~seeds, return_indices=True)
    who = owner[iy, ix]
    inside = dist <= np.asarray(radii)[who]
    layer[inside] = np.asarray(levels)[who[inside]]
    return layer, inside


def _rasterize_blobs(rng, n, width_range, intensity_range, cw, ch, margin=0):
    H, W = ch * SS, cw * SS
    layer = np.zeros((H, W), dtype=np.float64)
    inside = np.zeros((H, W), dtype=bool)
    for _ in range(n):
        cx, cy = rng.uniform(0, cw) * SS, rng.uniform(0, ch) * SS
        a = 0.5 * rng.uniform(*width_range) * SS
        b = a * rng.uniform(0.6, 1.0)
        th = rng.uniform(0, math.pi)
        level = rng.uniform(*intensity_range)
        r = int(math.ceil(a)) + 1
        y0, y1 = max(0, int(cy) - r), min(H, int(cy) + r + 1)
        x0, x1 = max(0, int(cx) - r), min(W, int(cx) + r + 1)
        if y0 >= y1 or x0 >= x1:
            continue
        yy, xx = np.mgrid[y0:y1, x0:x1]
        dx, dy = xx + 0.5 - cx, yy + 0.5 - cy
        u = dx * math.cos(th) + dy * math.sin(th)
        v = -dx * math.sin(th) + dy * math.cos(th)
        hit = (u / a) ** 2 + (v / b) ** 2 <= 1.0
        sub = layer[y0:y1, x0:x1]
        sub[hit] = np.maximum(sub[hit], level)
        inside[y0:y1, x0:x1] |= hit
    return layer, inside


def _organ_layer(rng, n, radius_range, contrast_range, cw, ch) -> np.ndarray:
    """Large flat ellipses with hard edges: costly to code, ignored by the segmenter."""
    layer = np.zeros((ch, cw), dtype=np.float64)
    yy, xx = np.mgrid[0:ch, 0:cw].astype(np.float64)
    scale = math.sqrt(cw * ch) / 512.0
    for _ in range(n):
        cx, cy = rng.uniform(0, cw), rng.uniform(0, ch)
        a = rng.uniform(*radius_range) * scale
        b = a * rng.uniform(0.4, 1.0)
        th = rng.uniform(0, math.pi)
        level = rng.uniform(*contrast_range) * (1.0 if rng.uniform() < 0.5 else -1.0)
        dx, dy = xx + 0.5 - cx, yy + 0.5 - cy
        u = dx * math.cos(th) + dy * math.sin(th)
        v = -dx * math.sin(th) + dy * math.cos(th)
        layer[(u / a) ** 2 + (v / b) ** 2 <= 1.0] += level
    return layer


def gen_phantom(cfg: PhantomConfig) -> tuple[Sequence, GroundTruth]:
    """Generate one deterministic phantom sequence and its ground-truth masks."""
    p = cfg.resolved()
    rng = np.random.default_rng(cfg.seed)
    w, h, n = cfg.width, cfg.height, cfg.n_frames
    margin = int(math.ceil(abs(cfg.drift_px_per_frame) * (n - 1))) + 1
    cw, ch = w + 2 * margin, h + 2 * margin

    theta = rng.uniform(0, 2 * math.pi)
    raster = _rasterize_vessels if cfg.domain == "B" else _rasterize_blobs
    layer, inside = raster(rng, int(p["n_vessels"]), p["vessel_width_range"], p["intensity_range"], cw, ch, margin)
    organs = _organ_layer(rng, p["organs"], p["organ_radius"], p["organ_contrast"], cw, ch)

    frames = np.empty((n, h, w), dtype=np.uint8)
    masks = np.empty((n, h, w), dtype=bool)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    salt = (cfg.seed * 7919 + (1 if cfg.domain == "A" else 2)) & 0xFFFFFFFF
    for k in range(n):
        ox = int(round(SS * k * cfg.drift_px_per_frame * math.cos(theta)))
        oy = int(round(SS * k * cfg.drift_px_per_frame * math.sin(theta)))
        y0, x0 = margin * SS + oy, margin * SS + ox
        crop = layer[y0 : y0 + h * SS, x0 : x0 + w * SS]
        cover = inside[y0 : y0 + h * SS, x0 : x0 + w * SS]
        vessel = crop.reshape(h, SS, w, SS).mean(axis=(1, 3))
        masks[k] = cover.reshape(h, SS, w, SS).sum(axis=(1, 3)) * 2 > SS * SS

        # texture moves with the anatomy
        px, py = xs + ox / SS, ys + oy / SS
        # organs move with integer-pixel precision only
        org = organs[margin + int(round(oy / SS)) :][:h, margin + int(round(ox / SS)) :][:, :w]
        tex = org + sum(amp * value_noise(px, py, cell, salt + 31 * j) for j, (cell, amp) in enumerate(p["texture"]))
        img = p["background"] + tex + vessel + rng.normal(0.0, p["noise_sigma"], size=(h, w))
        frames[k] = np.clip(np.floor(img + 0.5), 0, 255).astype(np.uint8)

    name = f"{cfg.domain}{cfg.seed:06d}"
    return Sequence(frames, name=name), GroundTruth(masks)


def save_sequence(seq: Sequence, path: str | Path, masks: np.ndarray | None = None, extra: dict | None = None) -> Path:
    """Write ``<path>.y8`` (planar 8-bit frames), optional ``.mask`` and a ``.json`` manifest."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.with_suffix(".y8").write_bytes(seq.frames.tobytes())
    manifest = dict(seq.manifest)
    manifest["has_mask"] = masks is not None
    if masks is not None:
        masks = np.asarray(masks, dtype=bool)
        if masks.shape != seq.frames.shape:
            raise DatasetError(f"mask shape {masks.shape} does not match frames {seq.frames.shape}")
        path.with_suffix(".mask").write_bytes(np.packbits(masks.ravel()).tobytes())
    if extra:
        manifest.update(extra)
    path.with_suffix(".json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    return path.with_suffix(".json")


def load_sequence(path: str | Path) -> tuple[Sequence, np.ndarray | None]:
    """Load a sequence written by :func:`save_sequence`; returns (sequence, masks or None)."""
    path = Path(path)
    mpath = path.with_suffix(".json")
    try:
        manifest = json.loads(mpath.read_text())
    except FileNotFoundError:
        raise DatasetError(f"missing manifest {mpath}") from None
    w, h, n = manifest["width"], manifest["height"], manifest["frame_count"]
    if w <= 0 or h <= 0 or w % CTU_SIZE or h % CTU_SIZE:
        raise DatasetError(f"{mpath}: dimensions {w}x{h} are not multiples of {CTU_SIZE}")
    ypath = path.with_suffix(".y8")
    try:
        raw = ypath.read_bytes()
    except FileNotFoundError:
        raise DatasetError(f"missing payload {ypath}") from None
    expected = w * h * n
    if len(raw) != expected:
        raise DatasetError(f"{ypath}: expected {expected} bytes, found {len(raw)}")
    seq = Sequence(np.frombuffer(raw, dtype=np.uint8).reshape(n, h, w).copy(), name=manifest["name"])
    masks = None
    if manifest.get("has_mask"):
        kpath = path.with_suffix(".mask")
        try:
            packed = np.frombuffer(kpath.read_bytes(), dtype=np.uint8)
        except FileNotFoundError:
            raise DatasetError(f"missing mask file {kpath}") from None
        if packed.size != -(-expected // 8):
            raise DatasetError(f"{kpath}: expected {-(-expected // 8)} bytes, found {packed.size}")
        masks = np.unpackbits(packed)[:expected].reshape(n, h, w).astype(bool)
    return seq, masks


def gen_corpus(n: int, domain: str, base_seed: int, out_dir: str | Path, **overrides) -> dict:
    """Write ``n`` phantoms to ``out_dir/<domain>/`` and update ``out_dir/manifest.json``."""
    if n < 1:
        raise DatasetError(f"corpus size must be >= 1, got {n}")
    out = Path(out_dir)
    entries = []
    for i in range(n):
        cfg = PhantomConfig(seed=base_seed + i, domain=domain, **overrides)
        seq, gt = gen_phantom(cfg)
        rel = Path(domain) / seq.name
        try:
            save_sequence(seq, out / rel, gt.masks, extra={"phantom": _cfg_dict(cfg)})
        except OSError as e:
            raise DatasetError(f"cannot write {out / rel}: {e}") from e
        entries.append({"id": seq.name, "domain": domain, "seed": cfg.seed, "path": str(rel) + ".json"})

    mpath = out / "manifest.json"
    sequences = []
    if mpath.exists():
        sequences = [e for e in json.loads(mpath.read_text())["sequences"] if e["domain"] != domain]
    sequences = sorted(sequences + entries, key=lambda e: (e["domain"], e["id"]))
    manifest = {"sequences": sequences}
    mpath.write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    return manifest


def load_corpus(corpus_dir: str | Path, domain: str | None = None) -> list[tuple[Sequence, np.ndarray | None]]:
    root = Path(corpus_dir)
    mpath = root / "manifest.json"
    if not mpath.exists():
        raise DatasetError(f"no corpus manifest at {mpath}")
    entries = json.loads(mpath.read_text())["sequences"]
    if domain is not None:
        entries = [e for e in entries if e["domain"] == domain]
    return [load_sequence(root / e["path"]) for e in entries]


def _cfg_dict(cfg: PhantomConfig) -> dict:
    d = asdict(cfg)
    if d["vessel_width_range"] is not None:
        d["vessel_width_range"] = list(d["vessel_width_range"])
    return d
