"""Assemble a small annotated forensic dataset from the toy checkpoints.

Builds a tile pool with the procedural provider, then draws the
pristine / fully-synthetic / partially-manipulated split and materializes
every artifact (images, manipulated basemaps, masks, manifest).

Run:  python demos/02_train_toy_models.py && python demos/04_build_dataset.py
"""
import json
from collections import Counter
from pathlib import Path

import numpy as np

from terradiff import (
    CityIndex,
    GeoCoordinate,
    Provider,
    SourceTag,
    TilePair,
    TileStore,
    build_schedule,
    load_checkpoint,
    procedural_rasters,
)
from terradiff.dataset import ModelBundle, SplitPolicy, build_split, validate_manifest

OUT = Path(__file__).parent / "_out"
SIZE = 32
PROC16 = SourceTag(Provider.PROC, 16)


def main():
    if not (OUT / "image.pt").exists():
        raise SystemExit("run demos/02_train_toy_models.py first")

    # pristine pool: one store, one city (train/test splits would use
    # disjoint city lists here)
    store = TileStore(OUT / "tiles")
    if not store.list_dirs():
        rng = np.random.default_rng(3)
        for _ in range(20):
            coord = GeoCoordinate(float(rng.uniform(-60, 60)), float(rng.uniform(-170, 170)))
            sat, bmp = procedural_rasters(5, coord, SIZE)
            store.save(TilePair(satellite=sat, basemap=bmp, coord=coord, source=PROC16, city="demopolis"))

    img_state, img_meta = load_checkpoint(OUT / "image.pt")
    bm_state, _ = load_checkpoint(OUT / "basemap.pt")
    bundle = ModelBundle(
        image=(img_state, build_schedule(img_state.config.T)),
        city_index=CityIndex(img_meta["cities"]),
        basemap=(bm_state, build_schedule(bm_state.config.T)),
    )

    manifest = build_split(
        store, {"MB16": bundle}, split="test", n=14, seed=2024, out_root=OUT / "dataset",
        policy=SplitPolicy(mask_generators=("bezier",), footprint_only_models=()),
        model_roster=["MB16"],
    )
    print("counts by type:", dict(Counter(r.image_type for r in manifest.records)))
    print("manifest digest:", manifest.digest())

    report = validate_manifest(manifest, OUT / "dataset" / "test", store=store)
    print("validation:", "ok" if report.ok else report.violations)
    print("records live in", OUT / "dataset" / "test" / "manifest.jsonl")
    sample = manifest.records[0].to_dict()
    print("example record:\n", json.dumps(sample, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
