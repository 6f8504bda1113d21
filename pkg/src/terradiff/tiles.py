"""Co-registered satellite/basemap tile pairs and their on-disk store."""
from __future__ import annotations

import io
import json
import os
import tempfile
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError
from .geo import GeoCoordinate, SourceTag
from .palette import DEFAULT_PALETTE, LayerPalette, is_palette_pure


@dataclass(frozen=True)
class TilePair:
    """Satellite image + simplified basemap + geo/provider metadata."""

    satellite: np.ndarray  # (H, W, 3) uint8
    basemap: np.ndarray    # (H, W, 3) uint8, palette-pure
    coord: GeoCoordinate
    source: SourceTag
    city: str

    def __post_init__(self) -> None:
        if self.satellite.shape != self.basemap.shape:
            raise DataError(
                f"satellite/basemap shape mismatch: {self.satellite.shape} vs {self.basemap.shape}"
            )
        if self.satellite.dtype != np.uint8 or self.basemap.dtype != np.uint8:
            raise DataError("tile rasters must be uint8")

    def validate_palette(self, palette: LayerPalette = DEFAULT_PALETTE) -> None:
        if not is_palette_pure(self.basemap, palette):
            raise DataError("basemap contains colors outside the registered palette")

    @property
    def size(self) -> int:
        return self.satellite.shape[0]

    def key(self) -> str:
        return f"{self.city}/{self.source.tag}/{_coord_slug(self.coord)}"


def _coord_slug(coord: GeoCoordinate) -> str:
    return f"{coord.lat:.6f}_{coord.lon:.6f}"


def save_png(path: Path | str, raster: np.ndarray) -> None:
    """Lossless PNG write via temp file + rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    os.close(fd)
    try:
        Image.fromarray(raster).save(tmp, format="PNG")
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def load_png(path: Path | str) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB") if im.mode not in ("RGB", "L") else im)


def encode_png(raster: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(raster).save(buf, format="PNG")
    return buf.getvalue()


def decode_png(data: bytes) -> np.ndarray:
    try:
        with Image.open(io.BytesIO(data)) as im:
            return np.asarray(im.convert("RGB") if im.mode not in ("RGB", "L") else im)
    except Exception as e:
        raise DataError(f"undecodable PNG payload: {e}") from e


class TileStore:
    """Directory layout: tiles/<city>/<source>/<lat>_<lon>/{sat.png,map.png,meta.json}."""

    def __init__(self, root: Path | str, palette: LayerPalette = DEFAULT_PALETTE):
        self.root = Path(root)
        self.palette = palette

    def _dir(self, pair: TilePair) -> Path:
        return self.root / pair.city / pair.source.tag / _coord_slug(pair.coord)

    def save(self, pair: TilePair) -> Path:
        pair.validate_palette(self.palette)
        d = self._dir(pair)
        save_png(d / "sat.png", pair.satellite)
        save_png(d / "map.png", pair.basemap)
        meta = {
            "lat": pair.coord.lat,
            "lon": pair.coord.lon,
            "provider": pair.source.provider.value,
            "zoom": pair.source.zoom,
            "city": pair.city,
            "retrieved_at": datetime.now(timezone.utc).isoformat(),
            "palette_version": self.palette.version,
        }
        tmp = d / "meta.json.tmp"
        tmp.write_text(json.dumps(meta, indent=2, sort_keys=True))
        os.replace(tmp, d / "meta.json")
        return d

    def load(self, city: str, source: SourceTag, coord: GeoCoordinate) -> TilePair:
        return self.load_dir(self.root / city / source.tag / _coord_slug(coord))

    def load_dir(self, d: Path | str) -> TilePair:
        d = Path(d)
        try:
            meta = json.loads((d / "meta.json").read_text())
            sat = load_png(d / "sat.png")
            bmp = load_png(d / "map.png")
        except FileNotFoundError as e:
            raise DataError(f"incomplete tile at {d}: {e}") from e
        from .geo import Provider  # local import to keep module load order simple

        return TilePair(
            satellite=sat,
            basemap=bmp,
            coord=GeoCoordinate(meta["lat"], meta["lon"]),
            source=SourceTag(Provider(meta["provider"]), meta["zoom"]),
            city=meta["city"],
        )

    def list_dirs(self, city: str | None = None, source: SourceTag | None = None) -> list[Path]:
        out: list[Path] = []
        cities = [city] if city else sorted(p.name for p in self.root.iterdir() if p.is_dir()) if self.root.exists() else []
        for c in cities:
            croot = self.root / c
            if not croot.is_dir():
                continue
            sources = [source.tag] if source else sorted(p.name for p in croot.iterdir() if p.is_dir())
            for s in sources:
                sroot = croot / s
                if not sroot.is_dir():
                    continue
                out.extend(sorted(p for p in sroot.iterdir() if (p / "meta.json").exists()))
        return out

    def iter_pairs(self, city: str | None = None, source: SourceTag | None = None):
        for d in self.list_dirs(city, source):
            yield self.load_dir(d)


def load_pair_dir(d: Path | str) -> TilePair:
    """Load one tile directory without constructing a store."""
    d = Path(d)
    return TileStore(d.parent).load_dir(d)
