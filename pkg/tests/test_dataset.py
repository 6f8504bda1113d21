import numpy as np
import pytest

from terradiff.dataset import (
    DatasetManifest,
    ModelBundle,
    PoolEntry,
    SplitPolicy,
    TYPE_FULLY_SYNTHETIC,
    TYPE_PARTIALLY_MANIPULATED,
    TYPE_PRISTINE,
    build_split,
    plan_split,
    pool_from_store,
    validate_manifest,
)
from terradiff.diffusion import DiffusionConfig, ModelState
from terradiff.errors import DataError, PolicyError
from terradiff.geo import CityIndex, GeoCoordinate, Provider, SourceTag
from terradiff.pipelines import BasemapMode, ManipulationClass
from terradiff.procedural import procedural_rasters
from terradiff.schedule import build_schedule
from terradiff.tiles import TilePair, TileStore

SIZE = 16
PROC16 = SourceTag(Provider.PROC, 16)

# bezier-only: GrabCut needs realistic image sizes, exercised separately at 64 px
BEZIER_POLICY = SplitPolicy(mask_generators=("bezier",), footprint_only_models=())


def fake_pool(n, cities=("avalon", "brundisia")):
    return [
        PoolEntry(tile_id=f"{cities[i % len(cities)]}/PROC16/t{i:04d}", city=cities[i % len(cities)],
                  source="PROC16", path=f"/nonexistent/t{i:04d}")
        for i in range(n)
    ]


def make_store(tmp_path, cities=("avalon", "brundisia"), per_city=6, size=SIZE):
    store = TileStore(tmp_path / "tiles")
    rng = np.random.default_rng(0)
    for city in cities:
        for _ in range(per_city):
            coord = GeoCoordinate(float(rng.uniform(-50, 50)), float(rng.uniform(-160, 160)))
            sat, bmp = procedural_rasters(3, coord, size)
            store.save(TilePair(satellite=sat, basemap=bmp, coord=coord, source=PROC16, city=city))
    return store


def micro_bundles(size=SIZE, ids=("MB16", "G17", "MB18")):
    cities = CityIndex(["avalon", "brundisia"])
    img_cfg = DiffusionConfig(resolution=size, base_channels=8, channel_mults=(1, 2), res_blocks=1,
                              in_channels=6, class_count=cities.class_count, T=8)
    bm_cfg = DiffusionConfig(resolution=size, base_channels=8, channel_mults=(1, 2), res_blocks=1,
                             in_channels=3, class_count=cities.class_count, aux_class_count=3, T=8)
    bundle = ModelBundle(
        image=(ModelState.build(img_cfg, seed=0), build_schedule(img_cfg.T)),
        city_index=cities,
        basemap=(ModelState.build(bm_cfg, seed=1), build_schedule(bm_cfg.T)),
    )
    return {i: bundle for i in ids}


class TestPolicy:
    def test_split_model_restrictions(self):
        p = SplitPolicy()
        p.check_model("train", "MB16")
        with pytest.raises(PolicyError):
            p.check_model("train", "G17")
        p.check_model("test", "G17")
        with pytest.raises(PolicyError):
            p.check_model("test", "XX99")

    def test_unknown_split(self):
        with pytest.raises(PolicyError):
            SplitPolicy().models_for("dev")


class TestPlanSplit:
    def test_empty_plan(self):
        m = plan_split(fake_pool(4), "train", 0, seed=1)
        assert m.records == []
        assert sum(m.counts().values()) == 0

    def test_deterministic_manifest(self):
        pool = fake_pool(200)
        a = plan_split(pool, "test", 100, seed=9)
        b = plan_split(pool, "test", 100, seed=9)
        assert a.digest() == b.digest()
        c = plan_split(pool, "test", 100, seed=10)
        assert a.digest() != c.digest()

    def test_train_roster_rejects_test_models(self):
        with pytest.raises(PolicyError):
            plan_split(fake_pool(10), "train", 5, seed=0, model_roster=["G17"])

    def test_type_partition_and_fields(self):
        m = plan_split(fake_pool(100), "test", 50, seed=3)
        for r in m.records:
            assert r.validate(materialized=False) == []
        assert sum(m.counts().values()) == 50

    def test_statistical_bands(self):
        n = 3000
        m = plan_split(fake_pool(3200), "test", n, seed=2024)
        counts = m.counts()
        sd_half = np.sqrt(n * 0.25)
        assert abs(counts[TYPE_PRISTINE] - n / 2) < 3 * sd_half
        n_rest = n - counts[TYPE_PRISTINE]
        sd_rest = np.sqrt(n_rest * 0.25)
        assert abs(counts[TYPE_FULLY_SYNTHETIC] - n_rest / 2) < 3 * sd_rest
        full = [r for r in m.records if r.image_type == TYPE_FULLY_SYNTHETIC]
        for mode in BasemapMode:
            k = sum(1 for r in full if r.basemap_mode == mode.value)
            sd = np.sqrt(len(full) * (1 / 3) * (2 / 3))
            assert abs(k - len(full) / 3) < 3 * sd
        classes = [r.manip_class for r in m.records if r.image_type == TYPE_PARTIALLY_MANIPULATED]
        k = sum(1 for c in classes if c == ManipulationClass.BUILDINGS_ROADS.value)
        sd = np.sqrt(len(classes) * 0.25)
        assert abs(k - len(classes) / 2) < 3 * sd

    def test_pristine_refs_disjoint_from_manipulated(self):
        m = plan_split(fake_pool(80), "test", 60, seed=5)
        pristine = {r.reference_id for r in m.records if r.image_type == TYPE_PRISTINE}
        manip = {r.reference_id for r in m.records if r.image_type != TYPE_PRISTINE}
        assert not (pristine & manip)

    def test_pool_too_small_for_pristine(self):
        with pytest.raises(DataError):
            plan_split(fake_pool(2), "train", 30, seed=0)

    def test_mb18_masks_are_grabcut_with_footprints(self):
        m = plan_split(fake_pool(300), "test", 120, seed=8, model_roster=["MB18"])
        partial = [r for r in m.records if r.image_type == TYPE_PARTIALLY_MANIPULATED]
        assert partial
        assert all(r.seeds["mask_generator"] == "grabcut" for r in partial)
        assert all(r.seeds["mask_footprints"] for r in partial)


class TestManifestIO:
    def test_roundtrip(self, tmp_path):
        m = plan_split(fake_pool(30), "train", 10, seed=4, model_roster=["MB16"])
        p = tmp_path / "m.jsonl"
        m.save(p)
        back = DatasetManifest.load(p)
        assert back.digest() == m.digest()
        assert [r.to_dict() for r in back.records] == [r.to_dict() for r in m.records]

    def test_header_total_checked(self, tmp_path):
        m = plan_split(fake_pool(30), "train", 4, seed=4)
        p = tmp_path / "m.jsonl"
        lines = m.dumps().splitlines()
        p.write_text("\n".join(lines[:-1]) + "\n")  # drop one record
        with pytest.raises(DataError):
            DatasetManifest.load(p)


class TestMaterialize:
    def test_build_and_validate(self, tmp_path):
        store = make_store(tmp_path, per_city=10)
        out = tmp_path / "dataset"
        manifest = build_split(store, micro_bundles(), "test", 12, seed=6, out_root=out,
                               policy=BEZIER_POLICY)
        assert manifest.materialized
        report = validate_manifest(manifest, out / "test", store=store)
        assert report.ok, report.violations
        for r in manifest.records:
            assert (out / "test" / r.image_path).exists()

    def test_rebuild_same_seed_same_digest(self, tmp_path):
        store = make_store(tmp_path, per_city=10)
        bundles = micro_bundles()
        a = build_split(store, bundles, "test", 8, seed=7, out_root=tmp_path / "d1", policy=BEZIER_POLICY)
        b = build_split(store, bundles, "test", 8, seed=7, out_root=tmp_path / "d2", policy=BEZIER_POLICY)
        assert a.digest() == b.digest()

    def test_grabcut_footprint_path_at_64px(self, tmp_path):
        store = make_store(tmp_path, per_city=4, size=64)
        out = tmp_path / "dataset"
        manifest = build_split(store, micro_bundles(size=64, ids=("MB18",)), "test", 6, seed=11,
                               out_root=out, model_roster=["MB18"])
        report = validate_manifest(manifest, out / "test", store=store)
        assert report.ok, report.violations
        partial = [r for r in manifest.records if r.image_type == TYPE_PARTIALLY_MANIPULATED]
        for r in partial:
            assert r.seeds["mask_generator"] == "grabcut"
            assert r.size_class is not None

    def test_validation_detects_missing_mask(self, tmp_path):
        store = make_store(tmp_path, per_city=10)
        out = tmp_path / "dataset"
        manifest = build_split(store, micro_bundles(), "test", 14, seed=8, out_root=out,
                               policy=BEZIER_POLICY)
        partial = [r for r in manifest.records if r.image_type == TYPE_PARTIALLY_MANIPULATED]
        if not partial:
            pytest.skip("no partial records drawn")
        victim = partial[0]
        (out / "test" / victim.mask_path).unlink()
        report = validate_manifest(manifest, out / "test", store=store)
        path_violations = [v for v in report.violations if v["kind"] == "path"]
        assert len(path_violations) == 1
        assert path_violations[0]["record"] == victim.image_id

    def test_validation_detects_city_leakage(self, tmp_path):
        store = make_store(tmp_path, per_city=10)
        out = tmp_path / "dataset"
        manifest = build_split(store, micro_bundles(), "train", 6, seed=9, out_root=out,
                               model_roster=["MB16"], policy=BEZIER_POLICY)
        report = validate_manifest(manifest, out / "train", store=store,
                                   other_split_cities=["avalon"])
        assert any(v["kind"] == "leakage" for v in report.violations)

    def test_validation_detects_tampered_known_region(self, tmp_path):
        store = make_store(tmp_path, per_city=10)
        out = tmp_path / "dataset"
        manifest = build_split(store, micro_bundles(), "test", 14, seed=10, out_root=out,
                               policy=BEZIER_POLICY)
        partial = [r for r in manifest.records if r.image_type == TYPE_PARTIALLY_MANIPULATED]
        if not partial:
            pytest.skip("no partial records drawn")
        from terradiff.masks import load_mask_bitmap
        from terradiff.tiles import load_png, save_png

        r = partial[0]
        img = load_png(out / "test" / r.image_path).copy()
        mask = load_mask_bitmap(out / "test" / r.mask_path)
        ys, xs = np.where(~mask)
        img[ys[0], xs[0]] = 255 - img[ys[0], xs[0]]
        save_png(out / "test" / r.image_path, img)
        report = validate_manifest(manifest, out / "test", store=store, fidelity_samples=1000)
        assert any(v["kind"] == "fidelity" and v["record"] == r.image_id for v in report.violations)

    def test_plan_only_not_validatable(self, tmp_path):
        m = plan_split(fake_pool(10), "train", 3, seed=0)
        report = validate_manifest(m, tmp_path)
        assert not report.ok and report.violations[0]["kind"] == "state"


class TestPoolFromStore:
    def test_pool_enumeration_and_filter(self, tmp_path):
        store = make_store(tmp_path, per_city=3)
        pool = pool_from_store(store)
        assert len(pool) == 6
        assert {e.city for e in pool} == {"avalon", "brundisia"}
        only = pool_from_store(store, cities=["avalon"])
        assert len(only) == 3 and all(e.city == "avalon" for e in only)
