"""Color-coded basemap layers and palette quantization.

A basemap is a semantic raster: every pixel carries exactly one layer color.
The palette is ordered; registration order is the deterministic tie-break
when quantizing colors equidistant from two entries.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError

RGB = tuple[int, int, int]


@dataclass(frozen=True)
class LayerPalette:
    """Ordered mapping layer name -> RGB color."""

    layers: tuple[tuple[str, RGB], ...]
    version: str = "1"

    def __post_init__(self) -> None:
        names = [n for n, _ in self.layers]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate layer names in palette")
        colors = [c for _, c in self.layers]
        if len(set(colors)) != len(colors):
            raise ConfigError("palette colors must be pairwise distinct")
        for c in colors:
            if len(c) != 3 or any(not (0 <= v <= 255) for v in c):
                raise ConfigError(f"bad RGB triple {c!r}")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.layers)

    def colors(self) -> np.ndarray:
        """(P, 3) uint8 array in registration order."""
        return np.array([c for _, c in self.layers], dtype=np.uint8)

    def color(self, name: str) -> RGB:
        for n, c in self.layers:
            if n == name:
                return c
        raise KeyError(name)

    def index(self, name: str) -> int:
        for i, (n, _) in enumerate(self.layers):
            if n == name:
                return i
        raise KeyError(name)

    def __len__(self) -> int:
        return len(self.layers)


DEFAULT_PALETTE = LayerPalette(
    layers=(
        ("background", (233, 226, 207)),
        ("water", (64, 120, 200)),
        ("greenspace", (112, 180, 108)),
        ("airports", (168, 96, 200)),
        ("buildings", (130, 130, 130)),
        ("roads", (255, 255, 255)),
        ("highways", (245, 150, 40)),
    )
)


def _require_rgb(raster: np.ndarray) -> np.ndarray:
    a = np.asarray(raster)
    if a.ndim != 3 or a.shape[2] != 3:
        raise DataError(f"expected (H, W, 3) raster, got shape {a.shape}")
    return a


def simplify_basemap(raster: np.ndarray, palette: LayerPalette = DEFAULT_PALETTE) -> np.ndarray:
    """Quantize an RGB raster to the nearest palette color per pixel.

    Nearest by squared Euclidean distance in RGB; ties resolve to the
    earliest-registered palette entry (argmin keeps the first minimum).
    Idempotent: palette-pure input comes back unchanged.
    """
    a = _require_rgb(raster).astype(np.int32)
    pal = palette.colors().astype(np.int32)  # (P, 3)
    # (H, W, P) squared distances; small P keeps this cheap even at 512px.
    d = ((a[:, :, None, :] - pal[None, None, :, :]) ** 2).sum(axis=-1)
    idx = d.argmin(axis=-1)
    return palette.colors()[idx]


def layer_map(basemap: np.ndarray, palette: LayerPalette = DEFAULT_PALETTE) -> np.ndarray:
    """Map a palette-pure basemap to an (H, W) array of palette indices."""
    a = _require_rgb(basemap)
    pal = palette.colors()
    out = np.full(a.shape[:2], -1, dtype=np.int64)
    for i in range(len(pal)):
        out[(a == pal[i]).all(axis=-1)] = i
    if (out < 0).any():
        n = int((out < 0).sum())
        raise DataError(f"basemap is not palette-pure: {n} off-palette pixels")
    return out


def is_palette_pure(basemap: np.ndarray, palette: LayerPalette = DEFAULT_PALETTE) -> bool:
    a = _require_rgb(basemap)
    pal = palette.colors()
    ok = np.zeros(a.shape[:2], dtype=bool)
    for i in range(len(pal)):
        ok |= (a == pal[i]).all(axis=-1)
    return bool(ok.all())


def off_palette_count(basemap: np.ndarray, palette: LayerPalette = DEFAULT_PALETTE) -> int:
    a = _require_rgb(basemap)
    pal = palette.colors()
    ok = np.zeros(a.shape[:2], dtype=bool)
    for i in range(len(pal)):
        ok |= (a == pal[i]).all(axis=-1)
    return int((~ok).sum())


def layer_mask(basemap: np.ndarray, layer: str, palette: LayerPalette = DEFAULT_PALETTE) -> np.ndarray:
    """Boolean mask of pixels carrying the given layer's color."""
    a = _require_rgb(basemap)
    c = np.array(palette.color(layer), dtype=a.dtype)
    return (a == c).all(axis=-1)
