"""Deterministic procedural satellite/basemap world.

All features are pure functions of (seed, global pixel coordinate), where the
global pixel grid is derived from lat/lon at a given zoom. Tiles rendered at
the same size/zoom/seed are therefore mutually consistent: roads, water bodies
and buildings continue across tile boundaries.
"""
from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .geo import GeoCoordinate
from .palette import DEFAULT_PALETTE, LayerPalette

_C1 = np.uint64(0x9E3779B97F4A7C15)
_C2 = np.uint64(0xBF58476D1CE4E5B9)
_C3 = np.uint64(0x94D049BB133111EB)

# palette indices in DEFAULT_PALETTE registration order
_BG, _WATER, _GREEN, _AIRPORT, _BUILDING, _ROAD, _HIGHWAY = range(7)


def _mix(h: np.ndarray) -> np.ndarray:
    h = (h ^ (h >> np.uint64(30))) * _C2
    h = (h ^ (h >> np.uint64(27))) * _C3
    return h ^ (h >> np.uint64(31))


def _u64(a) -> np.ndarray:
    return np.atleast_1d(np.asarray(a, dtype=np.int64)).view(np.uint64)


def _hash(seed: int, tag: int, x, y, k: int = 0) -> np.ndarray:
    """Avalanche hash of (seed, tag, x, y, k); broadcasts over x/y arrays.

    uint64 arithmetic wraps by design (modular mixing).
    """
    with np.errstate(over="ignore"):
        h = np.uint64((seed ^ (tag * 0x632BE59B)) & 0xFFFFFFFFFFFFFFFF)
        h = _mix(h + _u64(x) * _C1)
        h = _mix(h + _u64(y) * _C2)
        if k:
            h = _mix(h + np.uint64((k * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF))
    return h


def _u01(seed: int, tag: int, x, y, k: int = 0) -> np.ndarray:
    return _hash(seed, tag, x, y, k).astype(np.float64) / float(2**64)


def _value_noise(seed: int, tag: int, gx: np.ndarray, gy: np.ndarray, scale: float) -> np.ndarray:
    """Bilinear value noise over a hashed lattice, in [0, 1)."""
    fx = gx / scale
    fy = gy / scale
    x0 = np.floor(fx).astype(np.int64)
    y0 = np.floor(fy).astype(np.int64)
    tx = fx - x0
    ty = fy - y0
    # smoothstep fade
    tx = tx * tx * (3.0 - 2.0 * tx)
    ty = ty * ty * (3.0 - 2.0 * ty)
    v00 = _u01(seed, tag, x0, y0)
    v10 = _u01(seed, tag, x0 + 1, y0)
    v01 = _u01(seed, tag, x0, y0 + 1)
    v11 = _u01(seed, tag, x0 + 1, y0 + 1)
    return (v00 * (1 - tx) + v10 * tx) * (1 - ty) + (v01 * (1 - tx) + v11 * tx) * ty


def pixels_per_degree(zoom: int) -> float:
    """Horizontal scale of the synthetic world at a web-map zoom level."""
    return 256.0 * (2.0**zoom) / 360.0


def tile_origin(coord: GeoCoordinate, size: int, zoom: int) -> tuple[int, int]:
    """Global pixel coordinates of the tile's top-left corner (tile centered on coord)."""
    ppd = pixels_per_degree(zoom)
    cx = int(np.floor(coord.lon * ppd + 0.5))
    cy = int(np.floor(-coord.lat * ppd + 0.5))
    return cx - size // 2, cy - size // 2


def _feature_grid(size: int) -> int:
    # city-block pitch in pixels; bounded so any tile spans several blocks
    return max(8, min(48, size // 3))


def _line_member(seed: int, tag: int, g: np.ndarray, pitch: int, width: int) -> np.ndarray:
    """True where g falls on a hashed-offset grid line of the given pitch."""
    b = np.floor_divide(g, pitch)
    off = np.floor(_u01(seed, tag, b, 0) * (pitch - width)).astype(np.int64)
    return (g - b * pitch - off >= 0) & (g - b * pitch - off < width)


def render_layers(seed: int, gx0: int, gy0: int, size: int) -> np.ndarray:
    """(size, size) palette-index map for the tile at global origin (gx0, gy0)."""
    gx = gx0 + np.arange(size, dtype=np.int64)[None, :]
    gy = gy0 + np.arange(size, dtype=np.int64)[:, None]
    gx = np.broadcast_to(gx, (size, size))
    gy = np.broadcast_to(gy, (size, size))

    grid = _feature_grid(size)
    road_w = max(2, grid // 10)

    idx = np.full((size, size), _BG, dtype=np.int64)

    water = _value_noise(seed, 10, gx, gy, scale=3.2 * grid) < 0.33
    idx[water] = _WATER
    green = (_value_noise(seed, 11, gx, gy, scale=2.1 * grid) < 0.36) & ~water
    idx[green] = _GREEN

    # airports: rare runway rectangles in hashed super-cells, land only
    sc = 6 * grid
    sx = np.floor_divide(gx, sc)
    sy = np.floor_divide(gy, sc)
    has_airport = _u01(seed, 12, sx, sy) < 0.03
    ax = gx - sx * sc
    ay = gy - sy * sc
    runway = (ax >= sc // 10) & (ax < sc - sc // 10) & (ay >= int(0.42 * sc)) & (ay < int(0.58 * sc))
    center_water = _value_noise(seed, 10, sx * sc + sc // 2, sy * sc + sc // 2, scale=3.2 * grid) < 0.33
    idx[has_airport & runway & ~center_water] = _AIRPORT

    # buildings: up to two hashed rectangles per block cell, on land cells only
    bx = np.floor_divide(gx, grid)
    by = np.floor_divide(gy, grid)
    lx = gx - bx * grid
    ly = gy - by * grid
    cell_water = _value_noise(seed, 10, bx * grid + grid // 2, by * grid + grid // 2, scale=3.2 * grid) < 0.33
    building = np.zeros((size, size), dtype=bool)
    min_side = max(2, grid // 5)
    max_side = max(min_side + 1, grid // 2)
    for k in range(2):
        present = _u01(seed, 13, bx, by, k=k + 1) < (0.85 if k == 0 else 0.45)
        bw = (min_side + np.floor(_u01(seed, 14, bx, by, k=k + 1) * (max_side - min_side))).astype(np.int64)
        bh = (min_side + np.floor(_u01(seed, 15, bx, by, k=k + 1) * (max_side - min_side))).astype(np.int64)
        ox = np.floor(_u01(seed, 16, bx, by, k=k + 1) * (grid - bw)).astype(np.int64)
        oy = np.floor(_u01(seed, 17, bx, by, k=k + 1) * (grid - bh)).astype(np.int64)
        building |= present & (lx >= ox) & (lx < ox + bw) & (ly >= oy) & (ly < oy + bh)
    building &= ~cell_water
    idx[building] = _BUILDING

    roads = _line_member(seed, 1, gx, grid, road_w) | _line_member(seed, 2, gy, grid, road_w)
    idx[roads] = _ROAD

    hw_pitch = 4 * grid
    hw_w = 2 * road_w
    hbx = np.floor_divide(gx, hw_pitch)
    hby = np.floor_divide(gy, hw_pitch)
    hv = _line_member(seed, 3, gx, hw_pitch, hw_w) & (_u01(seed, 5, hbx, 0) < 0.45)
    hh = _line_member(seed, 4, gy, hw_pitch, hw_w) & (_u01(seed, 6, 0, hby) < 0.45)
    idx[hv | hh] = _HIGHWAY

    # guarantee at least 3 distinct layers without touching tile borders
    if len(np.unique(idx)) < 3:
        s = max(2, size // 8)
        c0 = size // 2 - s // 2
        idx[c0 : c0 + s, c0 : c0 + s] = _BUILDING
    return idx


_SAT_BASE = np.array(
    [
        [167, 156, 136],  # background
        [38, 58, 92],     # water
        [58, 102, 54],    # greenspace
        [150, 147, 150],  # airports
        [190, 188, 184],  # buildings
        [118, 118, 122],  # roads
        [88, 88, 94],     # highways
    ],
    dtype=np.float64,
)

_SAT_AMP = np.array([14.0, 5.0, 16.0, 6.0, 10.0, 6.0, 5.0])


def render_satellite(seed: int, gx0: int, gy0: int, size: int, idx: np.ndarray) -> np.ndarray:
    """Textured uint8 rendering consistent with the layer map."""
    gx = np.broadcast_to(gx0 + np.arange(size, dtype=np.int64)[None, :], (size, size))
    gy = np.broadcast_to(gy0 + np.arange(size, dtype=np.int64)[:, None], (size, size))
    grid = _feature_grid(size)

    grain = (_u01(seed, 20, gx, gy) - 0.5) * 2.0
    shading = (_value_noise(seed, 21, gx, gy, scale=5.0 * grid) - 0.5) * 2.0

    sat = _SAT_BASE[idx].copy()
    sat += (_SAT_AMP[idx] * grain)[..., None]
    sat += (9.0 * shading)[..., None]

    # per-block brightness variation on rooftops
    bx = np.floor_divide(gx, grid)
    by = np.floor_divide(gy, grid)
    block_mod = (_u01(seed, 22, bx, by) - 0.5) * 50.0
    roof = idx == _BUILDING
    sat[roof] += block_mod[roof, None]

    # canopy speckle on greenspace
    canopy = (_value_noise(seed, 23, gx, gy, scale=3.0) - 0.5) * 24.0
    gmask = idx == _GREEN
    sat[gmask, 1] += canopy[gmask]

    # faint swell on water
    wmask = idx == _WATER
    sat[wmask] += (np.sin(gy[wmask] / 3.0) * 2.0)[:, None]

    return np.clip(np.floor(sat + 0.5), 0, 255).astype(np.uint8)


def procedural_rasters(
    seed: int,
    coord: GeoCoordinate,
    size: int,
    zoom: int = 16,
    palette: LayerPalette = DEFAULT_PALETTE,
) -> tuple[np.ndarray, np.ndarray]:
    """(satellite, basemap) uint8 rasters for a tile centered on coord."""
    if size < 16:
        raise ConfigError(f"tile size must be >= 16, got {size}")
    gx0, gy0 = tile_origin(coord, size, zoom)
    idx = render_layers(seed, gx0, gy0, size)
    basemap = palette.colors()[idx]
    satellite = render_satellite(seed, gx0, gy0, size, idx)
    return satellite, basemap


def disaster_after(satellite: np.ndarray, seed: int) -> np.ndarray:
    """Toy 'aftermath' transform: darken and overlay smoke blobs.

    Used to build procedural before/after pairs for style-transfer training.
    """
    size_y, size_x = satellite.shape[:2]
    gx = np.broadcast_to(np.arange(size_x, dtype=np.int64)[None, :], (size_y, size_x))
    gy = np.broadcast_to(np.arange(size_y, dtype=np.int64)[:, None], (size_y, size_x))
    smoke_field = _value_noise(seed, 40, gx, gy, scale=max(8.0, size_x / 4.0))
    alpha = np.clip((0.62 - smoke_field) * 3.0, 0.0, 0.85)
    smoke_color = np.array([112.0, 106.0, 100.0])
    out = satellite.astype(np.float64) * 0.55
    out = out * (1 - alpha[..., None]) + smoke_color[None, None, :] * alpha[..., None]
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)
