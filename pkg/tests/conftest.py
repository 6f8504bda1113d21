import hashlib
import os
from pathlib import Path

import numpy as np
import pytest
import torch

from terradiff.diffusion import DiffusionConfig, ModelState, TrainBatch, save_checkpoint, load_checkpoint, train_model
from terradiff.geo import GeoCoordinate, Provider, SourceTag
from terradiff.imageops import sat_to_tensor
from terradiff.procedural import procedural_rasters
from terradiff.schedule import build_schedule
from terradiff.tiles import TilePair

PROC16 = SourceTag(Provider.PROC, 16)

CACHE_DIR = Path(os.environ.get("TERRADIFF_TEST_CACHE", Path(__file__).parent / ".cache"))

# overfit bundle knobs (shared by unit + acceptance tests)
OVERFIT_SIZE = 64
OVERFIT_ITERS = 800
OVERFIT_LR = 1e-3
OVERFIT_SEED = 1234


def micro_config(**kw) -> DiffusionConfig:
    base = dict(resolution=16, base_channels=8, channel_mults=(1, 2), res_blocks=1, in_channels=3, class_count=3, T=8)
    base.update(kw)
    return DiffusionConfig(**base)


def make_proc_pairs(n: int, size: int, seed: int = 0, city: str = "proctown") -> list[TilePair]:
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(n):
        coord = GeoCoordinate(float(rng.uniform(-60, 60)), float(rng.uniform(-170, 170)))
        sat, bmp = procedural_rasters(seed, coord, size)
        pairs.append(TilePair(satellite=sat, basemap=bmp, coord=coord, source=PROC16, city=city))
    return pairs


def pairs_to_batch(pairs: list[TilePair], city_ids: list[int]) -> TrainBatch:
    x0 = torch.stack([sat_to_tensor(p.satellite) for p in pairs])
    cond = torch.stack([sat_to_tensor(p.basemap) for p in pairs])
    return TrainBatch(x0=x0, cond_image=cond, class_ids=torch.tensor(city_ids, dtype=torch.long))


def toy_manip_basemap(seed: int, size: int, heavy: str) -> np.ndarray:
    """Constructed palette-pure basemap dominated by one manipulation class.

    A shared background frame makes the class label the only cue at high
    noise, so a model trained on these genuinely uses the aux embedding.
    """
    from terradiff.palette import DEFAULT_PALETTE

    rng = np.random.default_rng(seed)
    pal = DEFAULT_PALETTE
    frame = max(2, size // 8)
    img = np.empty((size, size, 3), dtype=np.uint8)
    img[:] = pal.color("background")
    inner = slice(frame, size - frame)
    if heavy == "buildings-roads":
        img[inner, inner] = pal.color("buildings")
        phase = int(rng.integers(0, 6))
        for r in range(frame + phase, size - frame, 6):
            img[r : r + 2, inner] = pal.color("roads")
            img[inner, r : r + 2] = pal.color("roads")
    else:
        img[inner, inner] = pal.color("greenspace")
        yy, xx = np.mgrid[0:size, 0:size]
        for _ in range(4):
            cx, cy = rng.integers(frame + 2, size - frame - 2, size=2)
            r = int(rng.integers(3, max(4, size // 5)))
            blob = (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
            blob[:frame] = blob[-frame:] = False
            blob[:, :frame] = blob[:, -frame:] = False
            img[blob] = pal.color("water")
    return img


def _cached_model(name: str, config, make_batch_fn, iters: int, lr: float, seed: int, kind: str):
    """Train-once-per-config fixture helper with an on-disk checkpoint cache."""
    key = hashlib.sha256(f"{name}|{config.config_hash()}|{iters}|{lr}|{seed}".encode()).hexdigest()[:16]
    path = CACHE_DIR / f"{name}-{key}.pt"
    schedule = build_schedule(config.T)
    if path.exists():
        state, _ = load_checkpoint(path, expected_config=config)
        return state, schedule
    state = ModelState.build(config, seed=seed, lr=lr)
    rng = torch.Generator().manual_seed(seed)
    train_model(state, schedule, make_batch_fn, iters, rng)
    CACHE_DIR.mkdir(parents=True, exist_ok=True)
    save_checkpoint(state, path, kind=kind)
    return state, schedule


@pytest.fixture(scope="session")
def toy_basemap_model():
    """32 px basemap diffusion model with the manipulation-class aux table.

    Overfit on constructed basemaps so aux id 1 means dense buildings/roads
    and aux id 2 means greenspace/water.
    """
    from terradiff.diffusion import TrainBatch
    from terradiff.imageops import sat_to_tensor as s2t

    config = DiffusionConfig(
        resolution=32, base_channels=24, channel_mults=(1, 2), res_blocks=1,
        in_channels=3, class_count=2, aux_class_count=3, T=100,
    )
    mats = [toy_manip_basemap(s, 32, "buildings-roads") for s in range(6)] + [
        toy_manip_basemap(s, 32, "greenspace-water") for s in range(6)
    ]
    batch = TrainBatch(
        x0=torch.stack([s2t(m) for m in mats]),
        cond_image=None,
        class_ids=torch.ones(12, dtype=torch.long),
        aux_ids=torch.tensor([1] * 6 + [2] * 6, dtype=torch.long),
    )
    return _cached_model("basemap", config, lambda _: batch, iters=900, lr=1e-3, seed=11, kind="basemap")


@pytest.fixture(scope="session")
def toy_disaster_model():
    """32 px image-to-image model trained on procedural before/after pairs."""
    from terradiff.diffusion import TrainBatch
    from terradiff.imageops import sat_to_tensor as s2t
    from terradiff.procedural import disaster_after

    config = DiffusionConfig(
        resolution=32, base_channels=24, channel_mults=(1, 2), res_blocks=1,
        in_channels=6, class_count=3, T=100,
    )
    pairs = make_proc_pairs(6, 32, seed=55)
    before = [p.satellite for p in pairs]
    after = [disaster_after(b, seed=i) for i, b in enumerate(before)]
    batch = TrainBatch(
        x0=torch.stack([s2t(a) for a in after]),
        cond_image=torch.stack([s2t(b) for b in before]),
        class_ids=torch.ones(6, dtype=torch.long),  # disaster class 1
    )
    return _cached_model("disaster", config, lambda _: batch, iters=600, lr=1e-3, seed=12, kind="disaster")


@pytest.fixture(scope="session")
def overfit_bundle():
    """A 64 px basemap-conditioned model overfit on 8 procedural pairs.

    Expensive to train, so the checkpoint is cached on disk keyed by the
    configuration digest; delete tests/.cache to retrain from scratch.
    """
    config = DiffusionConfig(
        resolution=OVERFIT_SIZE,
        base_channels=32,
        channel_mults=(1, 2, 2),
        res_blocks=1,
        in_channels=6,
        class_count=2,
        T=200,
    )
    import time

    pairs = make_proc_pairs(8, OVERFIT_SIZE, seed=77)
    digest_src = f"{config.config_hash()}|{OVERFIT_ITERS}|{OVERFIT_LR}|{OVERFIT_SEED}|pairs77".encode()
    key = hashlib.sha256(digest_src).hexdigest()[:16]
    ckpt = CACHE_DIR / f"overfit-{key}.pt"
    schedule = build_schedule(config.T)
    train_seconds = None
    if ckpt.exists():
        state, _ = load_checkpoint(ckpt, expected_config=config)
    else:
        t0 = time.monotonic()
        state = ModelState.build(config, seed=OVERFIT_SEED, lr=OVERFIT_LR)
        batch = pairs_to_batch(pairs, [1] * 8)
        rng = torch.Generator().manual_seed(OVERFIT_SEED)
        train_model(state, schedule, lambda _: batch, OVERFIT_ITERS, rng)
        train_seconds = time.monotonic() - t0
        CACHE_DIR.mkdir(parents=True, exist_ok=True)
        save_checkpoint(state, ckpt, kind="image", cities=["proctown"])
    return state, schedule, pairs, train_seconds
