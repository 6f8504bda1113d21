"""Train tiny basemap-conditioned and basemap-generation models.

Everything runs at 32 px with a short schedule so the demo finishes in a few
minutes on a laptop CPU. Checkpoints land in demos/_out/ and are reused by
the later demos; delete them to retrain.

Run:  python demos/02_train_toy_models.py
"""
import time
from pathlib import Path

import torch

from terradiff import (
    CityIndex,
    DiffusionConfig,
    GeoCoordinate,
    ModelState,
    Provider,
    SourceTag,
    TilePair,
    TrainBatch,
    build_schedule,
    procedural_rasters,
    save_checkpoint,
    train_model,
)
from terradiff.imageops import sat_to_tensor
from terradiff.pipelines import dominant_manip_aux_id

OUT = Path(__file__).parent / "_out"
OUT.mkdir(exist_ok=True)

SIZE = 32
ITERATIONS = 500
CITIES = CityIndex(["demopolis"])


def training_pairs(n=12, seed=21):
    import numpy as np

    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(n):
        coord = GeoCoordinate(float(rng.uniform(-60, 60)), float(rng.uniform(-170, 170)))
        sat, bmp = procedural_rasters(5, coord, SIZE)
        pairs.append(TilePair(satellite=sat, basemap=bmp, coord=coord,
                              source=SourceTag(Provider.PROC, 16), city="demopolis"))
    return pairs


def train(kind: str, out_path: Path):
    pairs = training_pairs()
    sats = torch.stack([sat_to_tensor(p.satellite) for p in pairs])
    maps = torch.stack([sat_to_tensor(p.basemap) for p in pairs])
    ids = torch.full((len(pairs),), CITIES.id_of("demopolis"), dtype=torch.long)

    if kind == "image":
        config = DiffusionConfig(resolution=SIZE, base_channels=24, channel_mults=(1, 2),
                                 res_blocks=1, in_channels=6, class_count=CITIES.class_count, T=100)
        batch = TrainBatch(sats, maps, ids)
    else:
        aux = torch.tensor([dominant_manip_aux_id(p.basemap) for p in pairs], dtype=torch.long)
        config = DiffusionConfig(resolution=SIZE, base_channels=24, channel_mults=(1, 2),
                                 res_blocks=1, in_channels=3, class_count=CITIES.class_count,
                                 aux_class_count=3, T=100)
        batch = TrainBatch(maps, None, ids, aux)

    schedule = build_schedule(config.T)
    state = ModelState.build(config, seed=0, lr=1e-3)
    rng = torch.Generator().manual_seed(0)
    t0 = time.time()
    losses = train_model(state, schedule, lambda _: batch, ITERATIONS, rng,
                         metrics_path=out_path.with_suffix(".metrics.jsonl"))
    print(f"{kind}: {ITERATIONS} iters in {time.time() - t0:.0f}s, "
          f"loss {sum(losses[:10]) / 10:.3f} -> {sum(losses[-10:]) / 10:.3f}")
    save_checkpoint(state, out_path, kind=kind, cities=CITIES.names,
                    aux_labels=["buildings-roads", "greenspace-water"] if kind == "basemap" else [])
    print("checkpoint:", out_path)


def main():
    for kind, name in (("image", "image.pt"), ("basemap", "basemap.pt")):
        path = OUT / name
        if path.exists():
            print(f"{kind}: checkpoint already present at {path}, skipping")
        else:
            train(kind, path)


if __name__ == "__main__":
    main()
