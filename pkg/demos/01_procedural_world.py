"""Tour of the offline procedural tile provider.

Samples coordinates inside a city region, fetches co-registered
satellite/basemap pairs, and demonstrates that the synthetic world is
seamless: adjacent tiles continue each other's roads and water bodies.

Run:  python demos/01_procedural_world.py
Outputs land in demos/_out/.
"""
from pathlib import Path

import numpy as np
from PIL import Image

from terradiff import (
    CityRegion,
    GeoCoordinate,
    Provider,
    SourceTag,
    fetch_pair,
    sample_coordinates,
    simplify_basemap,
)
from terradiff.procedural import pixels_per_degree
from terradiff.providers import ProceduralClient

OUT = Path(__file__).parent / "_out"
OUT.mkdir(exist_ok=True)

PROC16 = SourceTag(Provider.PROC, 16)


def grid(images, cols):
    h, w = images[0].shape[:2]
    rows = (len(images) + cols - 1) // cols
    canvas = np.full((rows * h + (rows - 1) * 2, cols * w + (cols - 1) * 2, 3), 255, dtype=np.uint8)
    for i, img in enumerate(images):
        r, c = divmod(i, cols)
        canvas[r * (h + 2) : r * (h + 2) + h, c * (w + 2) : c * (w + 2) + w] = img
    return canvas


def main():
    # 1. sample query coordinates uniformly inside a city's bounds
    city = CityRegion("demopolis", lat_min=40.0, lat_max=40.2, lon_min=-3.8, lon_max=-3.6)
    coords = sample_coordinates(city, n=6, seed=7)
    print("sampled coordinates:", [(round(c.lat, 4), round(c.lon, 4)) for c in coords])

    # 2. fetch tile pairs from the deterministic offline provider
    client = ProceduralClient(seed=11)
    pairs = [fetch_pair(client, c, PROC16, city.name, size=128) for c in coords]
    sheet = grid([p.satellite for p in pairs] + [p.basemap for p in pairs], cols=6)
    Image.fromarray(sheet).save(OUT / "01_tiles.png")
    print("wrote", OUT / "01_tiles.png", "(top row satellite, bottom row basemap)")

    # 3. seamlessness: two tiles exactly one tile apart share their edge features
    size = 128
    step = size / pixels_per_degree(16)
    left = fetch_pair(client, GeoCoordinate(40.1, -3.7), PROC16, city.name, size=size)
    right = fetch_pair(client, GeoCoordinate(40.1, -3.7 + step), PROC16, city.name, size=size)
    strip = np.concatenate([left.satellite, right.satellite], axis=1)
    Image.fromarray(strip).save(OUT / "01_seamless.png")
    print("wrote", OUT / "01_seamless.png", "(roads continue across the midline)")

    # 4. basemap simplification quantizes any raster onto the layer palette
    noisy = (left.basemap.astype(int) + np.random.default_rng(0).integers(-25, 25, left.basemap.shape)).clip(0, 255).astype(np.uint8)
    cleaned = simplify_basemap(noisy)
    assert np.array_equal(simplify_basemap(cleaned), cleaned)  # idempotent
    Image.fromarray(grid([noisy, cleaned], 2)).save(OUT / "01_simplify.png")
    print("wrote", OUT / "01_simplify.png", "(noisy provider style -> palette-pure)")


if __name__ == "__main__":
    main()
