import numpy as np
import pytest

from terradiff.errors import AuthError, DataError, RetriesExhaustedError, UnsupportedZoomError
from terradiff.geo import GeoCoordinate, Provider, SourceTag
from terradiff.palette import DEFAULT_PALETTE
from terradiff.procedural import pixels_per_degree
from terradiff.providers import (
    MapboxClient,
    ProceduralClient,
    RetryPolicy,
    TokenBucket,
    TransientTransportError,
    fetch_pair,
)
from terradiff.tiles import TilePair, TileStore, load_png, save_png

COORD = GeoCoordinate(40.0, -3.7)
PROC16 = SourceTag(Provider.PROC, 16)


class FlakyClient:
    """Fails n times with a transient error, then delegates to PROC."""

    def __init__(self, fail_times, error=TransientTransportError):
        self.fail_times = fail_times
        self.error = error
        self.calls = 0
        self.inner = ProceduralClient(seed=1)

    def supports(self, source):
        return True

    def fetch(self, coord, source, size):
        self.calls += 1
        if self.calls <= self.fail_times:
            raise self.error("boom")
        return self.inner.fetch(coord, SourceTag(Provider.PROC, source.zoom), size)


def no_sleep(_):
    pass


class TestFetchPair:
    def test_procedural_byte_identical(self):
        client = ProceduralClient(seed=3)
        a = fetch_pair(client, COORD, PROC16, "madrid", size=64)
        b = fetch_pair(client, COORD, PROC16, "madrid", size=64)
        assert np.array_equal(a.satellite, b.satellite)
        assert np.array_equal(a.basemap, b.basemap)
        a.validate_palette()

    def test_unsupported_zoom_is_immediate(self):
        with pytest.raises(UnsupportedZoomError):
            fetch_pair(MapboxClient(token="x"), COORD, SourceTag(Provider.G, 17), "x", size=64)

    def test_retries_then_succeeds(self):
        client = FlakyClient(fail_times=2)
        pair = fetch_pair(
            client, COORD, PROC16, "madrid", size=64, retry=RetryPolicy(max_attempts=4, sleep=no_sleep)
        )
        assert client.calls == 3
        assert pair.city == "madrid"

    def test_retries_exhausted(self):
        client = FlakyClient(fail_times=10)
        with pytest.raises(RetriesExhaustedError) as ei:
            fetch_pair(client, COORD, PROC16, "m", size=64, retry=RetryPolicy(max_attempts=3, sleep=no_sleep))
        assert client.calls == 3
        assert "PROC16" in str(ei.value)

    def test_auth_error_not_retried(self):
        client = FlakyClient(fail_times=10, error=AuthError)
        with pytest.raises(AuthError):
            fetch_pair(client, COORD, PROC16, "m", size=64, retry=RetryPolicy(max_attempts=5, sleep=no_sleep))
        assert client.calls == 1

    def test_missing_credential(self, monkeypatch):
        monkeypatch.delenv("MAPBOX_TOKEN", raising=False)
        with pytest.raises(AuthError) as ei:
            MapboxClient().fetch(COORD, SourceTag(Provider.MB, 16), 64)
        assert "MAPBOX_TOKEN" in str(ei.value)

    def test_adjacent_tiles_share_road_continuations(self):
        client = ProceduralClient(seed=8)
        size = 96
        ppd = pixels_per_degree(16)
        a = fetch_pair(client, GeoCoordinate(0.0, 10.0), PROC16, "c", size=size)
        b = fetch_pair(client, GeoCoordinate(0.0, 10.0 + size / ppd), PROC16, "c", size=size)
        road = DEFAULT_PALETTE.color("roads")
        la = (a.basemap[:, -1] == road).all(axis=-1)
        lb = (b.basemap[:, 0] == road).all(axis=-1)
        assert (la | lb).any()
        assert (la & lb).sum() / (la | lb).sum() > 0.6


class TestTokenBucket:
    def test_blocks_until_refill(self):
        t = [0.0]
        waits = []

        def clock():
            return t[0]

        def sleep(d):
            waits.append(d)
            t[0] += d

        tb = TokenBucket(rate_per_s=10, capacity=1, clock=clock, sleep=sleep)
        tb.acquire()  # consumes the initial token
        tb.acquire()  # must wait 0.1s
        assert waits and abs(sum(waits) - 0.1) < 1e-9

    def test_rate_zero_rejected(self):
        with pytest.raises(ValueError):
            TokenBucket(rate_per_s=0)


class TestTileStore:
    def test_roundtrip(self, tmp_path):
        pair = fetch_pair(ProceduralClient(seed=2), COORD, PROC16, "madrid", size=64)
        store = TileStore(tmp_path / "tiles")
        d = store.save(pair)
        assert (d / "sat.png").exists() and (d / "map.png").exists() and (d / "meta.json").exists()
        back = store.load("madrid", PROC16, COORD)
        assert np.array_equal(back.satellite, pair.satellite)
        assert np.array_equal(back.basemap, pair.basemap)
        assert back.coord == pair.coord and back.source == pair.source

    def test_list_dirs_filters(self, tmp_path):
        store = TileStore(tmp_path / "tiles")
        client = ProceduralClient(seed=2)
        store.save(fetch_pair(client, COORD, PROC16, "madrid", size=32))
        store.save(fetch_pair(client, GeoCoordinate(1, 1), PROC16, "lagos", size=32))
        assert len(store.list_dirs()) == 2
        assert len(store.list_dirs(city="madrid")) == 1

    def test_png_roundtrip_lossless(self, tmp_path):
        rng = np.random.default_rng(0)
        img = rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8)
        save_png(tmp_path / "x.png", img)
        assert np.array_equal(load_png(tmp_path / "x.png"), img)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(DataError):
            TilePair(
                satellite=np.zeros((8, 8, 3), dtype=np.uint8),
                basemap=np.zeros((9, 9, 3), dtype=np.uint8),
                coord=COORD,
                source=PROC16,
                city="x",
            )
