"""Forensic dataset assembly: split planning, artifact materialization,
manifests with ground-truth annotations, and validation.

Planning is separated from materialization so the sampling policy can be
exercised (and statistically tested) without running any diffusion model.
Both stages are deterministic functions of their seeds; rebuilding a split
with the same inputs yields a byte-identical manifest.

Reference full-scale split sizes this sampling reproduces in proportion
(train/test): 4,964/1,511 pristine, 2,496/886 fully synthetic, 2,540/753
partially manipulated, i.e. roughly half pristine with a fair coin between
the two synthetic kinds; the defaults below (p_pristine=0.5) match that.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diffusion import ModelState
from .errors import ConfigError, DataError, MaskError, PolicyError
from .geo import CityIndex
from .masks import (
    GENERATOR_BEZIER,
    GENERATOR_GRABCUT,
    Mask,
    bezier_mask,
    grabcut_mask,
    load_mask_bitmap,
    save_mask,
)
from .palette import DEFAULT_PALETTE, LayerPalette, layer_mask
from .pipelines import (
    BasemapMode,
    ManipulationClass,
    generate_fully_synthetic,
    two_stage_manipulate,
)
from .schedule import NoiseSchedule
from .tiles import TilePair, TileStore, load_png, save_png

SCHEMA_VERSION = 1

TYPE_PRISTINE = "pristine"
TYPE_FULLY_SYNTHETIC = "fully-synthetic"
TYPE_PARTIALLY_MANIPULATED = "partially-manipulated"
IMAGE_TYPES = (TYPE_PRISTINE, TYPE_FULLY_SYNTHETIC, TYPE_PARTIALLY_MANIPULATED)

_RECORD_FIELDS = (
    "image_id", "image_type", "city", "source", "image_path", "basemap_mode",
    "manip_class", "mask_path", "size_class", "basemap_path", "reference_id",
    "model_id", "seeds",
)


@dataclass
class ManipulationRecord:
    """Per-image ground-truth annotation."""

    image_id: str
    image_type: str
    city: str
    source: str
    image_path: str
    basemap_mode: str | None = None
    manip_class: str | None = None
    mask_path: str | None = None
    size_class: str | None = None
    basemap_path: str | None = None
    reference_id: str | None = None
    model_id: str | None = None
    seeds: dict = field(default_factory=dict)

    def validate(self, materialized: bool = True) -> list[str]:
        """Field-applicability violations (empty list when conformant)."""
        bad: list[str] = []
        if self.image_type not in IMAGE_TYPES:
            bad.append(f"unknown image_type {self.image_type!r}")
            return bad
        if self.image_type == TYPE_PRISTINE:
            for f in ("basemap_mode", "manip_class", "mask_path", "size_class", "model_id"):
                if getattr(self, f) is not None:
                    bad.append(f"pristine record carries {f}")
        elif self.image_type == TYPE_FULLY_SYNTHETIC:
            if self.basemap_mode is None:
                bad.append("fully-synthetic record missing basemap_mode")
            if self.mask_path is not None or self.manip_class is not None:
                bad.append("fully-synthetic record carries manipulation fields")
            if self.model_id is None:
                bad.append("fully-synthetic record missing model_id")
        else:
            for f in ("manip_class", "mask_path", "model_id"):
                if getattr(self, f) is None:
                    bad.append(f"partially-manipulated record missing {f}")
            if materialized and self.size_class is None:
                bad.append("partially-manipulated record missing size_class")
            if self.basemap_mode is not None:
                bad.append("partially-manipulated record carries basemap_mode")
        return bad

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in _RECORD_FIELDS}

    @classmethod
    def from_dict(cls, d: dict) -> "ManipulationRecord":
        return cls(**{k: d.get(k) for k in _RECORD_FIELDS})


@dataclass
class DatasetManifest:
    split: str
    global_seed: int
    cities: list[str]
    model_roster: list[str]
    records: list[ManipulationRecord]
    materialized: bool = False
    schema_version: int = SCHEMA_VERSION

    def counts(self) -> dict[str, int]:
        out = {t: 0 for t in IMAGE_TYPES}
        for r in self.records:
            out[r.image_type] += 1
        return out

    def header(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "split": self.split,
            "global_seed": self.global_seed,
            "cities": list(self.cities),
            "model_roster": list(self.model_roster),
            "materialized": self.materialized,
            "counts": self.counts(),
            "total": len(self.records),
        }

    def dumps(self) -> str:
        lines = [json.dumps(self.header(), sort_keys=True)]
        lines += [json.dumps(r.to_dict(), sort_keys=True) for r in self.records]
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()

    def save(self, path: Path | str) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(self.dumps())
        tmp.replace(path)

    @classmethod
    def load(cls, path: Path | str) -> "DatasetManifest":
        path = Path(path)
        try:
            lines = path.read_text().splitlines()
        except FileNotFoundError:
            raise DataError(f"manifest not found: {path}") from None
        if not lines:
            raise DataError(f"empty manifest: {path}")
        hdr = json.loads(lines[0])
        if hdr.get("schema_version") != SCHEMA_VERSION:
            raise DataError(f"unsupported manifest schema {hdr.get('schema_version')!r}")
        records = [ManipulationRecord.from_dict(json.loads(ln)) for ln in lines[1:] if ln.strip()]
        m = cls(
            split=hdr["split"],
            global_seed=hdr["global_seed"],
            cities=hdr["cities"],
            model_roster=hdr["model_roster"],
            records=records,
            materialized=hdr.get("materialized", False),
        )
        if hdr.get("total") != len(records):
            raise DataError("manifest header total disagrees with record count")
        return m


@dataclass(frozen=True)
class PoolEntry:
    """Reference to one pristine tile pair inside a TileStore."""

    tile_id: str
    city: str
    source: str
    path: str


def pool_from_store(store: TileStore, cities: list[str] | None = None) -> list[PoolEntry]:
    entries = []
    for d in store.list_dirs():
        meta = json.loads((d / "meta.json").read_text())
        if cities is not None and meta["city"] not in cities:
            continue
        tag = f"{meta['provider']}{meta['zoom']}"
        entries.append(PoolEntry(
            tile_id=f"{meta['city']}/{tag}/{d.name}", city=meta["city"], source=tag, path=str(d),
        ))
    return sorted(entries, key=lambda e: e.tile_id)


@dataclass(frozen=True)
class SplitPolicy:
    """Sampling policy mirroring the published dataset construction."""

    p_pristine: float = 0.5
    train_models: tuple[str, ...] = ("MB16",)
    test_models: tuple[str, ...] = ("MB16", "G17", "MB18")
    mask_fraction_lo: float = 0.01
    mask_fraction_hi: float = 0.20
    mask_generators: tuple[str, ...] = (GENERATOR_BEZIER, GENERATOR_GRABCUT)
    footprint_only_models: tuple[str, ...] = ("MB18",)  # GrabCut seeded by building footprints

    def models_for(self, split: str) -> tuple[str, ...]:
        if split == "train":
            return self.train_models
        if split == "test":
            return self.test_models
        raise PolicyError(f"unknown split {split!r}")

    def check_model(self, split: str, model_id: str) -> None:
        if model_id not in self.models_for(split):
            raise PolicyError(f"model {model_id!r} not allowed for split {split!r} "
                              f"(allowed: {self.models_for(split)})")


@dataclass
class ModelBundle:
    """Generator models published under one source-style id (e.g. MB16)."""

    image: tuple[ModelState, NoiseSchedule]
    city_index: CityIndex
    basemap: tuple[ModelState, NoiseSchedule] | None = None


def plan_split(
    pool: list[PoolEntry],
    split: str,
    n: int,
    seed: int,
    policy: SplitPolicy | None = None,
    model_roster: list[str] | None = None,
) -> DatasetManifest:
    """Draw the per-reference decisions for a split without generating pixels.

    Per reference: Bernoulli(p_pristine) keep-pristine; otherwise a fair coin
    between fully and partially synthetic. Fully synthetic draws a uniform
    basemap mode; partial draws a uniform manipulation class and a mask recipe.
    References consumed by manipulation are never also published as pristine.
    """
    policy = policy or SplitPolicy()
    allowed = policy.models_for(split)
    roster = list(model_roster) if model_roster is not None else list(allowed)
    for m in roster:
        policy.check_model(split, m)
    if n < 0:
        raise ConfigError("n must be >= 0")
    if n > 0 and not pool:
        raise DataError("empty pristine pool")
    if n > 0 and not roster:
        raise ConfigError("no generator models available for this split")

    rng = np.random.default_rng(seed)
    modes = [m.value for m in BasemapMode]
    classes = [c.value for c in ManipulationClass]

    draws = []
    n_pristine = 0
    for i in range(n):
        if rng.random() < policy.p_pristine:
            draws.append({"type": TYPE_PRISTINE})
            n_pristine += 1
        elif rng.random() < 0.5:
            draws.append({
                "type": TYPE_FULLY_SYNTHETIC,
                "mode": modes[int(rng.integers(len(modes)))],
                "model": roster[int(rng.integers(len(roster)))],
                "seed": int(rng.integers(2**62)),
            })
        else:
            model = roster[int(rng.integers(len(roster)))]
            footprint_seeding = model in policy.footprint_only_models
            if footprint_seeding:
                gen = GENERATOR_GRABCUT
            else:
                gen = policy.mask_generators[int(rng.integers(len(policy.mask_generators)))]
            draws.append({
                "type": TYPE_PARTIALLY_MANIPULATED,
                "class": classes[int(rng.integers(len(classes)))],
                "model": model,
                "mask_generator": gen,
                "mask_footprints": footprint_seeding,
                "mask_fraction": float(rng.uniform(policy.mask_fraction_lo, policy.mask_fraction_hi)),
                "mask_seed": int(rng.integers(2**62)),
                "seed": int(rng.integers(2**62)),
            })

    if n_pristine > len(pool):
        raise DataError(f"pool of {len(pool)} references cannot supply {n_pristine} pristine images")
    perm = rng.permutation(len(pool))
    rest = perm[n_pristine:]
    if n > n_pristine and len(rest) == 0:
        raise DataError("pool too small to keep pristine and manipulated references disjoint")

    records: list[ManipulationRecord] = []
    pi, ri = 0, 0
    for i, d in enumerate(draws):
        rid = f"{split}-{i:06d}"
        if d["type"] == TYPE_PRISTINE:
            ref = pool[perm[pi]]
            pi += 1
            records.append(ManipulationRecord(
                image_id=rid, image_type=TYPE_PRISTINE, city=ref.city, source=ref.source,
                image_path=f"images/{rid}.png", reference_id=ref.tile_id,
            ))
            continue
        ref = pool[rest[ri % len(rest)]]
        ri += 1
        if d["type"] == TYPE_FULLY_SYNTHETIC:
            records.append(ManipulationRecord(
                image_id=rid, image_type=TYPE_FULLY_SYNTHETIC, city=ref.city, source=d["model"],
                image_path=f"images/{rid}.png",
                basemap_mode=d["mode"],
                basemap_path=None if d["mode"] == BasemapMode.NONE.value else f"basemaps/{rid}.png",
                reference_id=ref.tile_id, model_id=d["model"],
                seeds={"seed": d["seed"]},
            ))
        else:
            records.append(ManipulationRecord(
                image_id=rid, image_type=TYPE_PARTIALLY_MANIPULATED, city=ref.city, source=d["model"],
                image_path=f"images/{rid}.png",
                manip_class=d["class"], mask_path=f"masks/{rid}.png",
                basemap_path=f"basemaps/{rid}.png",
                reference_id=ref.tile_id, model_id=d["model"],
                seeds={
                    "seed": d["seed"],
                    "mask_seed": d["mask_seed"],
                    "mask_generator": d["mask_generator"],
                    "mask_footprints": d["mask_footprints"],
                    "mask_fraction": round(d["mask_fraction"], 6),
                },
            ))

    cities = sorted({r.city for r in records}) if records else sorted({e.city for e in pool})
    return DatasetManifest(split=split, global_seed=seed, cities=cities,
                           model_roster=sorted(roster), records=records, materialized=False)


def _build_mask(record: ManipulationRecord, ref_pair: TilePair, palette: LayerPalette) -> Mask:
    """Deterministic mask construction with a bounded seed-bump retry.

    Retries keep the manifest digest reproducible: the same plan always walks
    the same seed sequence, and the seed actually used is recorded.
    """
    gen = record.seeds["mask_generator"]
    seed = record.seeds["mask_seed"]
    size = ref_pair.size
    fp = None
    if gen == GENERATOR_GRABCUT and record.seeds.get("mask_footprints"):
        footprints = layer_mask(ref_pair.basemap, "buildings", palette)
        fp = footprints if footprints.any() else None
    last: Exception | None = None
    for attempt in range(5):
        try:
            if gen == GENERATOR_BEZIER:
                m = bezier_mask(size, record.seeds["mask_fraction"], seed + attempt)
            else:
                m = grabcut_mask(ref_pair.satellite, footprints=fp, seed=seed + attempt)
            if attempt:
                record.seeds["mask_seed_used"] = seed + attempt
            return m
        except MaskError as e:
            last = e
    raise DataError(f"{record.image_id}: mask generation failed after 5 attempts: {last}")


def materialize_manifest(
    manifest: DatasetManifest,
    store: TileStore,
    models: dict[str, ModelBundle],
    out_root: Path | str,
    palette: LayerPalette = DEFAULT_PALETTE,
) -> DatasetManifest:
    """Generate every artifact a planned manifest describes and write the split."""
    out_root = Path(out_root)
    split_root = out_root / manifest.split
    for sub in ("images", "basemaps", "masks", "meta"):
        (split_root / sub).mkdir(parents=True, exist_ok=True)

    policy_models = set(manifest.model_roster)
    missing = policy_models - set(models)
    if missing:
        raise ConfigError(f"missing model bundles for {sorted(missing)}")

    by_tile: dict[str, TilePair] = {}

    def ref_pair(record: ManipulationRecord) -> TilePair:
        tid = record.reference_id
        if tid not in by_tile:
            by_tile[tid] = store.load_dir(store.root / tid)
        return by_tile[tid]

    for record in manifest.records:
        pair = ref_pair(record)
        img_path = split_root / record.image_path
        if record.image_type == TYPE_PRISTINE:
            save_png(img_path, pair.satellite)
        elif record.image_type == TYPE_FULLY_SYNTHETIC:
            bundle = models[record.model_id]
            city_id = bundle.city_index.id_of(record.city)
            res = generate_fully_synthetic(
                bundle.image, BasemapMode(record.basemap_mode), city_id, record.seeds["seed"],
                basemap_model=bundle.basemap, reference=pair,
            )
            save_png(img_path, res.image)
            if record.basemap_path:
                save_png(split_root / record.basemap_path, res.basemap)
            record.seeds.update({k: v for k, v in res.provenance.items() if k.endswith("_seed")})
        else:
            bundle = models[record.model_id]
            if bundle.basemap is None:
                raise ConfigError(f"model {record.model_id} lacks a basemap model for two-stage manipulation")
            city_id = bundle.city_index.id_of(record.city)
            mask = _build_mask(record, pair, palette)
            res = two_stage_manipulate(
                bundle.basemap, bundle.image, pair, mask,
                ManipulationClass(record.manip_class), city_id, record.seeds["seed"], palette,
            )
            save_png(img_path, res.image)
            save_png(split_root / record.basemap_path, res.basemap)
            save_mask(mask, split_root / record.mask_path)
            record.size_class = mask.size_class.value
            record.seeds["mask_area_fraction"] = round(mask.area_fraction, 6)
        (split_root / "meta" / f"{record.image_id}.json").write_text(
            json.dumps(record.to_dict(), sort_keys=True, indent=2)
        )

    manifest.materialized = True
    manifest.save(split_root / "manifest.jsonl")
    return manifest


def build_split(
    store: TileStore,
    models: dict[str, ModelBundle],
    split: str,
    n: int,
    seed: int,
    out_root: Path | str,
    cities: list[str] | None = None,
    policy: SplitPolicy | None = None,
    model_roster: list[str] | None = None,
    materialize: bool = True,
) -> DatasetManifest:
    pool = pool_from_store(store, cities)
    manifest = plan_split(pool, split, n, seed, policy, model_roster)
    if materialize:
        manifest = materialize_manifest(manifest, store, models, out_root)
        validate = validate_manifest(manifest, Path(out_root) / split, store=store)
        if not validate.ok:
            raise DataError(f"freshly built manifest failed validation: {validate.violations[:3]}")
    return manifest


@dataclass
class ValidationReport:
    violations: list[dict]
    checked_records: int = 0
    fidelity_checked: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "checked_records": self.checked_records,
            "fidelity_checked": self.fidelity_checked,
            "violations": self.violations,
        }


def validate_manifest(
    manifest: DatasetManifest,
    data_root: Path | str,
    store: TileStore | None = None,
    other_split_cities: list[str] | None = None,
    fidelity_samples: int = 50,
    seed: int = 0,
) -> ValidationReport:
    """Check path resolution, record conformance, roster disjointness, and
    spot-check known-region fidelity on sampled partially-manipulated records."""
    data_root = Path(data_root)
    violations: list[dict] = []

    def flag(record_id: str | None, kind: str, detail: str) -> None:
        violations.append({"record": record_id, "kind": kind, "detail": detail})

    if not manifest.materialized:
        flag(None, "state", "manifest is a plan; materialize before validating")
        return ValidationReport(violations)

    seen_ids = set()
    for r in manifest.records:
        for msg in r.validate():
            flag(r.image_id, "schema", msg)
        if r.image_id in seen_ids:
            flag(r.image_id, "schema", "duplicate image id")
        seen_ids.add(r.image_id)
        if r.city not in manifest.cities:
            flag(r.image_id, "roster", f"city {r.city!r} missing from manifest roster")
        for p in (r.image_path, r.mask_path, r.basemap_path):
            if p is not None and not (data_root / p).exists():
                flag(r.image_id, "path", f"missing file {p}")

    if other_split_cities is not None:
        overlap = sorted(set(manifest.cities) & set(other_split_cities))
        if overlap:
            flag(None, "leakage", f"city rosters overlap: {overlap}")

    pristine_refs = {r.reference_id for r in manifest.records if r.image_type == TYPE_PRISTINE}
    manip_refs = {r.reference_id for r in manifest.records if r.image_type != TYPE_PRISTINE}
    reused = sorted(pristine_refs & manip_refs)
    if reused:
        flag(None, "leakage", f"references published both pristine and manipulated: {reused[:3]}")

    fidelity_checked = 0
    if store is not None:
        partial = [r for r in manifest.records
                   if r.image_type == TYPE_PARTIALLY_MANIPULATED and (data_root / r.image_path).exists()
                   and r.mask_path and (data_root / r.mask_path).exists()]
        rng = np.random.default_rng(seed)
        k = min(fidelity_samples, len(partial))
        idx = rng.choice(len(partial), size=k, replace=False) if partial else []
        for i in idx:
            r = partial[int(i)]
            try:
                img = load_png(data_root / r.image_path)
                mask = load_mask_bitmap(data_root / r.mask_path)
                ref = store.load_dir(store.root / r.reference_id)
            except Exception as e:
                flag(r.image_id, "fidelity", f"could not load artifacts: {e}")
                continue
            if img.shape != ref.satellite.shape or mask.shape != img.shape[:2]:
                flag(r.image_id, "fidelity", "shape mismatch between image, mask, reference")
                continue
            if not np.array_equal(img[~mask], ref.satellite[~mask]):
                flag(r.image_id, "fidelity", "known region differs from reference")
            fidelity_checked += 1

    return ValidationReport(violations, checked_records=len(manifest.records), fidelity_checked=fidelity_checked)
