"""Manipulation-region masks: random smooth blobs and GrabCut segmentations.

Area budget: every produced mask covers at most 20% of the image (plus one
pixel of rounding). Size classes bucket masks for localization scoring; the
numeric thresholds below are this project's definition (right-closed bins):

    X-Small (0, 0.02] | Small (0.02, 0.05] | Medium (0.05, 0.10] | Large (0.10, 0.20]
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import cv2
import numpy as np
from scipy.interpolate import CubicSpline

from .errors import MaskAreaError, MaskDegenerateError, MaskError

MAX_AREA_FRACTION = 0.20

GENERATOR_BEZIER = "bezier"
GENERATOR_GRABCUT = "grabcut"


class SizeClass(str, Enum):
    X_SMALL = "X-Small"
    SMALL = "Small"
    MEDIUM = "Medium"
    LARGE = "Large"


_SIZE_BOUNDS = ((0.02, SizeClass.X_SMALL), (0.05, SizeClass.SMALL), (0.10, SizeClass.MEDIUM), (0.20, SizeClass.LARGE))


def size_class(area_fraction: float) -> SizeClass:
    """Bucket an area fraction; domain (0, 0.20], right-closed bins."""
    f = float(area_fraction)
    if not 0.0 < f <= MAX_AREA_FRACTION:
        raise MaskError(f"area fraction {f} outside (0, {MAX_AREA_FRACTION}]")
    for hi, cls in _SIZE_BOUNDS:
        if f <= hi:
            return cls
    raise MaskError(f"unbucketable fraction {f}")  # pragma: no cover


@dataclass(frozen=True)
class Mask:
    bitmap: np.ndarray  # (H, W) bool
    area_fraction: float
    size_class: SizeClass
    generator: str
    seed: int

    def __post_init__(self) -> None:
        bm = np.asarray(self.bitmap, dtype=bool)
        object.__setattr__(self, "bitmap", bm)
        total = bm.size
        actual = bm.sum() / total
        if abs(actual - self.area_fraction) > 1e-6:
            raise MaskError(f"area_fraction {self.area_fraction} inconsistent with bitmap ({actual})")
        if actual <= 0:
            raise MaskError("mask is empty")
        if actual > MAX_AREA_FRACTION + 1.0 / total:
            raise MaskError(f"mask covers {actual:.4f} > budget {MAX_AREA_FRACTION}")

    @classmethod
    def from_bitmap(cls, bitmap: np.ndarray, generator: str, seed: int) -> "Mask":
        bm = np.asarray(bitmap, dtype=bool)
        frac = float(bm.sum() / bm.size)
        # classification tolerates the 1-pixel rounding allowance at the cap
        return cls(bm, frac, size_class(min(frac, MAX_AREA_FRACTION)), generator, seed)


def _rasterize_blob(size: int, cx: float, cy: float, scale: float, r: np.ndarray, ts: np.ndarray) -> np.ndarray:
    shift = 3
    xs = cx + scale * r * np.cos(ts)
    ys = cy + scale * r * np.sin(ts)
    pts = np.stack([xs, ys], axis=1) * (1 << shift)
    canvas = np.zeros((size, size), dtype=np.uint8)
    cv2.fillPoly(canvas, [np.round(pts).astype(np.int32)], 1, lineType=cv2.LINE_8, shift=shift)
    return canvas.astype(bool)


def bezier_mask(size: int, target_fraction: float, seed: int, max_iters: int = 60) -> Mask:
    """Closed smooth random blob scaled about its center to the target area.

    Accepts when |area - target| <= max(0.1 * target, 1.5 px) while staying
    inside the 20% budget; the absolute pixel allowance only matters on tiny
    rasters where integer pixel counts cannot hit a narrow relative band.
    Raises MaskAreaError if the scaling loop cannot get there.
    """
    if not 0.0 < target_fraction <= MAX_AREA_FRACTION:
        raise MaskError(f"target fraction {target_fraction} outside (0, {MAX_AREA_FRACTION}]")
    if size < 4:
        raise MaskError("mask size too small")
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 13))
    # strictly increasing angles with a guaranteed gap; radii define a
    # star-shaped (hence simple, single-component) outline
    theta = (np.arange(n) + rng.uniform(0.15, 0.85, n)) * (2 * np.pi / n)
    radii = rng.uniform(0.35, 1.0, n)
    cs = CubicSpline(np.concatenate([theta, [theta[0] + 2 * np.pi]]),
                     np.concatenate([radii, [radii[0]]]), bc_type="periodic")
    ts = np.linspace(0, 2 * np.pi, 720, endpoint=False)
    r = np.clip(cs(ts + theta[0]), 0.15, 1.6)

    cx = size / 2 + float(rng.uniform(-0.08, 0.08)) * size
    cy = size / 2 + float(rng.uniform(-0.08, 0.08)) * size
    unit_area = 0.5 * np.trapezoid(r**2, ts) + 0.5 * r[0] ** 2 * (ts[1] - ts[0])
    scale = float(np.sqrt(target_fraction * size * size / unit_area))

    total = size * size
    tol = max(0.1 * target_fraction, 1.5 / total)
    tol_hi = MAX_AREA_FRACTION + 1.0 / total
    for _ in range(max_iters):
        bm = _rasterize_blob(size, cx, cy, scale, r, ts)
        frac = bm.sum() / total
        if frac > 0 and abs(frac - target_fraction) <= tol and frac <= tol_hi:
            return Mask.from_bitmap(bm, GENERATOR_BEZIER, seed)
        if frac <= 0:
            scale *= 2.0
        else:
            goal = min(target_fraction, MAX_AREA_FRACTION)
            scale *= float(np.clip(np.sqrt(goal / frac), 0.5, 2.0))
    raise MaskAreaError(
        f"could not reach area {target_fraction} at size {size} within {max_iters} scalings (last {frac:.4f})"
    )


def cap_area(bitmap: np.ndarray, cap: float = MAX_AREA_FRACTION) -> np.ndarray:
    """Erode a segmentation down to the area budget, lowest-confidence first.

    Confidence is distance to the background: boundary pixels go first.
    Deterministic tie-break by raster order.
    """
    bm = np.asarray(bitmap, dtype=bool)
    total = bm.size
    keep = int(np.floor(cap * total))
    if bm.sum() <= keep:
        return bm
    dist = cv2.distanceTransform(bm.astype(np.uint8), cv2.DIST_L2, 3).ravel()
    fg = np.flatnonzero(bm.ravel())
    order = np.argsort(-dist[fg], kind="stable")
    kept = fg[order[:keep]]
    out = np.zeros(total, dtype=bool)
    out[kept] = True
    return out.reshape(bm.shape)


def grabcut_mask(
    satellite: np.ndarray,
    footprints: np.ndarray | None = None,
    seed: int = 0,
    iterations: int = 5,
) -> Mask:
    """Iterative graph-cut foreground segmentation, capped at the area budget.

    Seeded by building footprints when given, else by a random rectangle.
    """
    img = np.asarray(satellite)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise MaskError(f"satellite must be (H, W, 3) uint8, got {img.shape} {img.dtype}")
    h, w = img.shape[:2]
    cv2.setRNGSeed(seed & 0x7FFFFFFF)
    gc_mask = np.zeros((h, w), dtype=np.uint8)
    bgd = np.zeros((1, 65), dtype=np.float64)
    fgd = np.zeros((1, 65), dtype=np.float64)
    try:
        if footprints is not None:
            fp = np.asarray(footprints, dtype=bool)
            if fp.shape != (h, w):
                raise MaskError("footprint shape mismatch")
            if not fp.any():
                raise MaskError("footprint seed is empty")
            gc_mask[:] = cv2.GC_PR_BGD
            gc_mask[fp] = cv2.GC_PR_FGD
            cv2.grabCut(img, gc_mask, None, bgd, fgd, iterations, cv2.GC_INIT_WITH_MASK)
        else:
            rng = np.random.default_rng(seed)
            rw = int(w * rng.uniform(0.25, 0.55))
            rh = int(h * rng.uniform(0.25, 0.55))
            x0 = int(rng.integers(0, max(1, w - rw)))
            y0 = int(rng.integers(0, max(1, h - rh)))
            cv2.grabCut(img, gc_mask, (x0, y0, rw, rh), bgd, fgd, iterations, cv2.GC_INIT_WITH_RECT)
    except cv2.error as e:
        raise MaskDegenerateError(f"graph-cut failed to converge: {e}") from e
    fg = (gc_mask == cv2.GC_FGD) | (gc_mask == cv2.GC_PR_FGD)
    if not fg.any():
        raise MaskDegenerateError("segmentation collapsed to empty foreground")
    fg = cap_area(fg, MAX_AREA_FRACTION)
    return Mask.from_bitmap(fg, GENERATOR_GRABCUT, seed)


def save_mask(mask: Mask, path: Path | str) -> None:
    """8-bit single-channel PNG (255 = manipulated) plus a JSON sidecar."""
    from .tiles import save_png

    path = Path(path)
    save_png(path, (mask.bitmap.astype(np.uint8)) * 255)
    sidecar = {
        "generator": mask.generator,
        "seed": mask.seed,
        "area_fraction": mask.area_fraction,
        "size_class": mask.size_class.value,
    }
    tmp = path.with_suffix(".json.tmp")
    tmp.write_text(json.dumps(sidecar, sort_keys=True))
    os.replace(tmp, path.with_suffix(".json"))


def load_mask(path: Path | str) -> Mask:
    from .tiles import load_png

    path = Path(path)
    raw = load_png(path)
    if raw.ndim == 3:
        raw = raw[..., 0]
    meta = json.loads(path.with_suffix(".json").read_text())
    return Mask(
        bitmap=raw >= 128,
        area_fraction=meta["area_fraction"],
        size_class=SizeClass(meta["size_class"]),
        generator=meta["generator"],
        seed=meta["seed"],
    )


def load_mask_bitmap(path: Path | str) -> np.ndarray:
    from .tiles import load_png

    raw = load_png(path)
    if raw.ndim == 3:
        raw = raw[..., 0]
    return raw >= 128
