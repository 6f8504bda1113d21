"""Tile providers: commercial API clients and the offline procedural world.

Credentials come from environment variables only (MAPBOX_TOKEN, GMAPS_KEY).
All clients are safe to share across threads; the rate limiter is the single
synchronized point.
"""
from __future__ import annotations

import io
import os
import threading
import time
from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from .errors import AuthError, ProviderError, RetriesExhaustedError, UnsupportedZoomError
from .geo import GeoCoordinate, Provider, SourceTag
from .palette import DEFAULT_PALETTE, LayerPalette, simplify_basemap
from .procedural import procedural_rasters
from .tiles import TilePair

DEFAULT_TILE_SIZE = 512


class TransientTransportError(ProviderError):
    """Retryable transport failure (timeouts, 5xx, connection resets)."""


class ProviderClient(Protocol):
    def fetch(self, coord: GeoCoordinate, source: SourceTag, size: int) -> tuple[np.ndarray, np.ndarray]:
        """Return (satellite, raw_basemap) uint8 rasters centered on coord."""
        ...

    def supports(self, source: SourceTag) -> bool: ...


class TokenBucket:
    """Thread-safe token bucket; acquire() blocks until a token is available."""

    def __init__(self, rate_per_s: float = 10.0, capacity: int | None = None,
                 clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        if rate_per_s <= 0:
            raise ValueError("rate must be positive")
        self.rate = rate_per_s
        self.capacity = capacity if capacity is not None else max(1, int(rate_per_s))
        self._tokens = float(self.capacity)
        self._last = clock()
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                self._tokens = min(self.capacity, self._tokens + (now - self._last) * self.rate)
                self._last = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self.rate
            self._sleep(wait)


@dataclass
class RetryPolicy:
    max_attempts: int = 4
    base_delay_s: float = 0.5
    max_delay_s: float = 8.0
    sleep: Callable[[float], None] = time.sleep

    def delays(self):
        for i in range(self.max_attempts - 1):
            yield min(self.max_delay_s, self.base_delay_s * (2**i))


class ProceduralClient:
    """Deterministic offline provider; byte-identical output for identical inputs."""

    def __init__(self, seed: int = 0, palette: LayerPalette = DEFAULT_PALETTE):
        self.seed = seed
        self.palette = palette

    def supports(self, source: SourceTag) -> bool:
        return source.provider is Provider.PROC

    def fetch(self, coord: GeoCoordinate, source: SourceTag, size: int = DEFAULT_TILE_SIZE):
        if not self.supports(source):
            raise UnsupportedZoomError(f"procedural client cannot serve {source.tag}")
        return procedural_rasters(self.seed, coord, size, zoom=source.zoom, palette=self.palette)


class _HttpClient:
    """Shared plumbing for the commercial static-image APIs."""

    provider: Provider
    env_var: str

    def __init__(self, token: str | None = None, session=None):
        self._token = token
        self._session = session

    @property
    def token(self) -> str:
        tok = self._token or os.environ.get(self.env_var, "")
        if not tok:
            raise AuthError(f"{self.provider.value}: credential missing; set {self.env_var}")
        return tok

    def _session_or_default(self):
        if self._session is None:
            import requests

            self._session = requests.Session()
        return self._session

    def supports(self, source: SourceTag) -> bool:
        return source.provider is self.provider

    def _get_image(self, url: str, params: dict) -> np.ndarray:
        import requests
        from PIL import Image

        try:
            resp = self._session_or_default().get(url, params=params, timeout=30)
        except requests.RequestException as e:
            raise TransientTransportError(f"{self.provider.value}: transport failure: {e}") from e
        if resp.status_code in (401, 403):
            raise AuthError(f"{self.provider.value}: authentication rejected (HTTP {resp.status_code})")
        if resp.status_code >= 500 or resp.status_code == 429:
            raise TransientTransportError(f"{self.provider.value}: HTTP {resp.status_code}")
        if resp.status_code != 200:
            raise ProviderError(f"{self.provider.value}: HTTP {resp.status_code}: {resp.text[:200]}")
        with Image.open(io.BytesIO(resp.content)) as im:
            return np.asarray(im.convert("RGB"))


class MapboxClient(_HttpClient):
    """MapBox Static Images API; one styled satellite + one simplified-style basemap call."""

    provider = Provider.MB
    env_var = "MAPBOX_TOKEN"
    SAT_STYLE = "mapbox/satellite-v9"

    def __init__(self, basemap_style: str = "mapbox/streets-v12", **kw):
        super().__init__(**kw)
        self.basemap_style = basemap_style

    def _url(self, style: str, coord: GeoCoordinate, zoom: int, size: int) -> str:
        return (
            f"https://api.mapbox.com/styles/v1/{style}/static/"
            f"{coord.lon},{coord.lat},{zoom}/{size}x{size}"
        )

    def fetch(self, coord: GeoCoordinate, source: SourceTag, size: int = DEFAULT_TILE_SIZE):
        if not self.supports(source):
            raise UnsupportedZoomError(f"MapBox client cannot serve {source.tag}")
        params = {"access_token": self.token, "attribution": "false", "logo": "false"}
        sat = self._get_image(self._url(self.SAT_STYLE, coord, source.zoom, size), params)
        bmp = self._get_image(self._url(self.basemap_style, coord, source.zoom, size), params)
        return sat, bmp


class GoogleMapsClient(_HttpClient):
    """Google Static Maps API; basemap uses a feature-stripped style string."""

    provider = Provider.G
    env_var = "GMAPS_KEY"
    BASE_URL = "https://maps.googleapis.com/maps/api/staticmap"
    # strip labels/borders/shading; leave color-coded feature layers
    STYLE = [
        "feature:all|element:labels|visibility:off",
        "feature:administrative|visibility:off",
    ]

    def fetch(self, coord: GeoCoordinate, source: SourceTag, size: int = DEFAULT_TILE_SIZE):
        if not self.supports(source):
            raise UnsupportedZoomError(f"Google client cannot serve {source.tag}")
        common = {
            "center": f"{coord.lat},{coord.lon}",
            "zoom": str(source.zoom),
            "size": f"{size}x{size}",
            "key": self.token,
        }
        sat = self._get_image(self.BASE_URL, {**common, "maptype": "satellite"})
        bmp = self._get_image(self.BASE_URL, {**common, "maptype": "roadmap", "style": self.STYLE})
        return sat, bmp


def client_for(source: SourceTag, proc_seed: int = 0) -> ProviderClient:
    if source.provider is Provider.PROC:
        return ProceduralClient(seed=proc_seed)
    if source.provider is Provider.MB:
        return MapboxClient()
    return GoogleMapsClient()


def fetch_pair(
    client: ProviderClient,
    coord: GeoCoordinate,
    source: SourceTag,
    city: str,
    size: int = DEFAULT_TILE_SIZE,
    palette: LayerPalette = DEFAULT_PALETTE,
    rate_limiter: TokenBucket | None = None,
    retry: RetryPolicy | None = None,
) -> TilePair:
    """Fetch one tile pair; simplify the basemap; retry transient failures.

    Auth failures and unsupported zooms are raised immediately; only
    transport-level errors are retried with bounded exponential backoff.
    """
    if not client.supports(source):
        raise UnsupportedZoomError(f"provider does not support {source.tag}")
    retry = retry or RetryPolicy()
    delays = list(retry.delays()) + [None]
    last: Exception | None = None
    for delay in delays:
        if rate_limiter is not None:
            rate_limiter.acquire()
        try:
            sat, raw_bmp = client.fetch(coord, source, size)
            break
        except TransientTransportError as e:
            last = e
            if delay is None:
                raise RetriesExhaustedError(
                    f"{source.tag}: {retry.max_attempts} attempts failed; last error: {e}"
                ) from e
            retry.sleep(delay)
    else:  # pragma: no cover - loop always breaks or raises
        raise RetriesExhaustedError(str(last))
    basemap = simplify_basemap(raw_bmp, palette)
    return TilePair(satellite=np.asarray(sat, dtype=np.uint8), basemap=basemap, coord=coord, source=source, city=city)
