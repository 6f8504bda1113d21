"""Geospatial primitives: coordinates, city regions, source tags, sampling."""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError, RegionError


class Provider(str, Enum):
    MB = "MB"      # MapBox
    G = "G"        # Google Maps
    PROC = "PROC"  # deterministic offline procedural world

    def __str__(self) -> str:
        return self.value


REAL_PROVIDER_ZOOMS = (16, 17, 18)


@dataclass(frozen=True, order=True)
class SourceTag:
    """Provider + tile zoom level, e.g. MB16, G17, MB18."""

    provider: Provider
    zoom: int

    def __post_init__(self) -> None:
        if self.provider is not Provider.PROC and self.zoom not in REAL_PROVIDER_ZOOMS:
            raise ConfigError(
                f"zoom {self.zoom} unsupported for provider {self.provider}; "
                f"real providers accept {REAL_PROVIDER_ZOOMS}"
            )

    @property
    def tag(self) -> str:
        return f"{self.provider.value}{self.zoom}"

    @classmethod
    def parse(cls, tag: str) -> "SourceTag":
        for p in Provider:
            if tag.startswith(p.value) and tag[len(p.value):].isdigit():
                return cls(p, int(tag[len(p.value):]))
        raise ConfigError(f"unparseable source tag {tag!r}")


MB16 = SourceTag(Provider.MB, 16)
G17 = SourceTag(Provider.G, 17)
MB18 = SourceTag(Provider.MB, 18)


@dataclass(frozen=True)
class GeoCoordinate:
    lat: float
    lon: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise ConfigError("coordinate components must be finite")
        if not (-90.0 <= self.lat <= 90.0):
            raise ConfigError(f"latitude {self.lat} outside [-90, 90]")
        if not (-180.0 <= self.lon <= 180.0):
            raise ConfigError(f"longitude {self.lon} outside [-180, 180]")


@dataclass(frozen=True)
class CityRegion:
    """Axis-aligned lat/lon rectangle with provider support.

    Degenerate (zero-area) bounds are rejected unless ``point_region`` is set.
    """

    name: str
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float
    provider_support: frozenset[SourceTag] = frozenset()
    point_region: bool = False

    def __post_init__(self) -> None:
        vals = (self.lat_min, self.lat_max, self.lon_min, self.lon_max)
        if any(not math.isfinite(v) for v in vals):
            raise RegionError(f"{self.name}: non-finite bounds")
        if self.lat_min > self.lat_max or self.lon_min > self.lon_max:
            raise RegionError(f"{self.name}: inverted bounds")
        if not (-90 <= self.lat_min and self.lat_max <= 90 and -180 <= self.lon_min and self.lon_max <= 180):
            raise RegionError(f"{self.name}: bounds outside valid lat/lon range")
        degenerate = (self.lat_min == self.lat_max) or (self.lon_min == self.lon_max)
        if degenerate and not self.point_region:
            raise RegionError(f"{self.name}: degenerate bounds require point_region=True")

    @property
    def center(self) -> GeoCoordinate:
        return GeoCoordinate(0.5 * (self.lat_min + self.lat_max), 0.5 * (self.lon_min + self.lon_max))


class CityIndex:
    """Stable city-name <-> class-id mapping. Id 0 is the null (unconditional) class."""

    NULL_ID = 0

    def __init__(self, names: list[str] | tuple[str, ...]):
        names = list(names)
        if len(set(names)) != len(names):
            raise ConfigError("duplicate city names")
        self._names = names
        self._ids = {n: i + 1 for i, n in enumerate(names)}

    @property
    def names(self) -> list[str]:
        return list(self._names)

    @property
    def class_count(self) -> int:
        """Number of cities + 1 null class."""
        return len(self._names) + 1

    def id_of(self, name: str) -> int:
        try:
            return self._ids[name]
        except KeyError:
            raise KeyError(f"unknown city {name!r}; known: {sorted(self._ids)}") from None

    def name_of(self, class_id: int) -> str:
        if not 1 <= class_id <= len(self._names):
            raise KeyError(f"class id {class_id} out of range 1..{len(self._names)}")
        return self._names[class_id - 1]

    def __contains__(self, name: str) -> bool:
        return name in self._ids


class CityRegistry:
    """Named city regions; names unique."""

    def __init__(self, regions: list[CityRegion] | None = None):
        self._regions: dict[str, CityRegion] = {}
        for r in regions or []:
            self.add(r)

    def add(self, region: CityRegion) -> None:
        if region.name in self._regions:
            raise RegionError(f"duplicate region name {region.name!r}")
        self._regions[region.name] = region

    def get(self, name: str) -> CityRegion:
        return self._regions[name]

    def names(self) -> list[str]:
        return sorted(self._regions)

    def __iter__(self):
        return iter(self._regions.values())

    def __len__(self) -> int:
        return len(self._regions)


def sample_coordinates(region: CityRegion, n: int, seed: int) -> list[GeoCoordinate]:
    """Draw n i.i.d. coordinates uniform in lat/lon over the region bounds.

    Uniform in lat/lon, not area-true: at high latitudes a degree of
    longitude covers less ground, so ground density skews poleward.
    """
    if n < 0:
        raise ConfigError(f"n must be >= 0, got {n}")
    rng = np.random.default_rng(seed)
    lats = rng.uniform(region.lat_min, region.lat_max, size=n)
    lons = rng.uniform(region.lon_min, region.lon_max, size=n)
    return [GeoCoordinate(float(a), float(o)) for a, o in zip(lats, lons)]
