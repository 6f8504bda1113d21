"""Operator command line: train | sample | inpaint | build-dataset | evaluate | serve.

Configuration comes from a YAML file (strict keys) with command-line flags
taking precedence. Every command honors --seed and prints the effective
config digest. Exit codes: 0 success, 2 config error, 3 data error,
4 adapter error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import torch
import yaml

from .bench import (
    STRATEGY_DETECTOR_FIRST,
    STRATEGY_SPLICER_FIRST,
    DetectorAdapter,
    SubprocessDetector,
    SubprocessLocalizer,
    evaluate,
    reference_detectors,
    reference_localizers,
    subprocess_detector_scores,
    subprocess_localizer_adapter,
)
from .dataset import DatasetManifest, ModelBundle, SplitPolicy, build_split, validate_manifest
from .diffusion import (
    DiffusionConfig,
    ModelState,
    TrainBatch,
    flip_augment,
    load_checkpoint,
    train_model,
)
from .errors import AdapterError, ConfigError, DataError
from .geo import CityIndex
from .imageops import color_match, sat_to_tensor, to_uint8, to_unit
from .masks import load_mask_bitmap
from .palette import DEFAULT_PALETTE
from .pipelines import (
    BasemapMode,
    MANIP_AUX_CLASS_COUNT,
    dominant_manip_aux_id,
    generate_fully_synthetic,
    inpaint as inpaint_image,
)
from .schedule import build_schedule
from .service import EditService, create_app
from .tiles import TilePair, TileStore, load_pair_dir, load_png, save_png

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_ADAPTER = 4


@dataclass
class RunConfig:
    """Flat declarative config; unknown keys are rejected."""

    tiles_root: str | None = None
    data_root: str | None = None
    checkpoint: str | None = None
    basemap_checkpoint: str | None = None
    resume: str | None = None
    out: str | None = None
    preset: str = "toy"
    model_kind: str = "image"           # image | basemap | disaster
    pairs_root: str | None = None       # disaster training data
    cities: list[str] = field(default_factory=list)
    disaster_classes: list[str] = field(default_factory=lambda: ["disaster"])
    iterations: int = 200
    lr: float = 1e-3
    batch_size: int = 8
    seed: int | None = None
    resolution: int | None = None
    base_channels: int | None = None
    timesteps: int | None = None
    cfg_scale: float = 1.0
    split: str = "test"
    n: int = 50
    p_pristine: float = 0.5
    mask_generators: list[str] = field(default_factory=lambda: ["bezier", "grabcut"])
    plan_only: bool = False
    models: dict = field(default_factory=dict)
    manifest: str | None = None
    detectors: list = field(default_factory=list)
    localizers: list = field(default_factory=list)
    localization_threshold: str | float = "calibrated"
    city: str | None = None
    mode: str = "truth"
    reference: str | None = None
    basemap: str | None = None
    mask: str | None = None
    color_match_reference: str | None = None
    host: str = "127.0.0.1"
    port: int = 8000
    workers: int = 2
    artifact_root: str | None = None

    @classmethod
    def load(cls, path: str | None, overrides: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        data: dict = {}
        if path:
            try:
                raw = yaml.safe_load(Path(path).read_text())
            except FileNotFoundError:
                raise ConfigError(f"config file not found: {path}") from None
            except yaml.YAMLError as e:
                raise ConfigError(f"config file is not valid YAML: {e}") from e
            if raw is None:
                raw = {}
            if not isinstance(raw, dict):
                raise ConfigError("config file must contain a mapping")
            unknown = sorted(set(raw) - known)
            if unknown:
                raise ConfigError(f"unknown config keys: {unknown}")
            data.update(raw)
        data.update({k: v for k, v in overrides.items() if v is not None and k in known})
        try:
            return cls(**data)
        except TypeError as e:
            raise ConfigError(f"bad config: {e}") from e

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True, default=str).encode()).hexdigest()


def _require_seed(cfg: RunConfig) -> int:
    if cfg.seed is None:
        raise ConfigError("--seed is mandatory for build commands")
    return int(cfg.seed)


def _diffusion_config(cfg: RunConfig, class_count: int) -> DiffusionConfig:
    if cfg.preset == "toy":
        base = DiffusionConfig.toy
    elif cfg.preset == "paper":
        base = DiffusionConfig.paper_scale
    else:
        raise ConfigError(f"unknown preset {cfg.preset!r} (toy|paper)")
    kw: dict = {"class_count": class_count}
    if cfg.model_kind == "image":
        kw["in_channels"] = 6
    elif cfg.model_kind == "basemap":
        kw["in_channels"] = 3
        kw["aux_class_count"] = MANIP_AUX_CLASS_COUNT
    elif cfg.model_kind == "disaster":
        kw["in_channels"] = 6
    else:
        raise ConfigError(f"unknown model kind {cfg.model_kind!r}")
    if cfg.resolution:
        kw["resolution"] = cfg.resolution
    if cfg.base_channels:
        kw["base_channels"] = cfg.base_channels
    if cfg.timesteps:
        kw["T"] = cfg.timesteps
    return base(**kw)


def _load_store(cfg: RunConfig) -> TileStore:
    if not cfg.tiles_root:
        raise ConfigError("tiles_root is required")
    root = Path(cfg.tiles_root)
    if not root.exists():
        raise DataError(f"tile store not found: {root}")
    return TileStore(root)


def _tile_batch_fn(pairs: list[TilePair], city_ids: list[int], kind: str, batch_size: int, palette=DEFAULT_PALETTE):
    sats = torch.stack([sat_to_tensor(p.satellite) for p in pairs])
    maps = torch.stack([sat_to_tensor(p.basemap) for p in pairs])
    cities = torch.tensor(city_ids, dtype=torch.long)
    if kind == "basemap":
        aux = torch.tensor([dominant_manip_aux_id(p.basemap, palette) for p in pairs], dtype=torch.long)
    else:
        aux = None

    def batch_fn(rng: torch.Generator) -> TrainBatch:
        idx = torch.randint(0, len(pairs), (min(batch_size, len(pairs)),), generator=rng)
        if kind == "image":
            b = TrainBatch(sats[idx], maps[idx], cities[idx])
        else:  # basemap
            b = TrainBatch(maps[idx], None, cities[idx], aux[idx])
        return flip_augment(b, rng)

    return batch_fn


def _disaster_batch_fn(pairs_root: Path, class_names: list[str], batch_size: int):
    before_paths = sorted(pairs_root.glob("*.before.png"))
    if not before_paths:
        raise DataError(f"no *.before.png pairs under {pairs_root}")
    labels_file = pairs_root / "labels.json"
    labels = json.loads(labels_file.read_text()) if labels_file.exists() else {}
    befores, afters, classes = [], [], []
    for bp in before_paths:
        ap = bp.with_name(bp.name.replace(".before.", ".after."))
        if not ap.exists():
            raise DataError(f"missing after image for {bp.name}")
        befores.append(sat_to_tensor(load_png(bp)))
        afters.append(sat_to_tensor(load_png(ap)))
        name = bp.name.replace(".before.png", "")
        cls = labels.get(name, class_names[0])
        if cls not in class_names:
            raise DataError(f"{bp.name}: unknown disaster class {cls!r}")
        classes.append(class_names.index(cls) + 1)
    x0 = torch.stack(afters)
    cond = torch.stack(befores)
    ids = torch.tensor(classes, dtype=torch.long)

    def batch_fn(rng: torch.Generator) -> TrainBatch:
        idx = torch.randint(0, len(befores), (min(batch_size, len(befores)),), generator=rng)
        return flip_augment(TrainBatch(x0[idx], cond[idx], ids[idx]), rng)

    return batch_fn


def cmd_train(cfg: RunConfig) -> int:
    seed = _require_seed(cfg)
    if not cfg.out:
        raise ConfigError("out (checkpoint path) is required")

    if cfg.model_kind == "disaster":
        if not cfg.pairs_root:
            raise ConfigError("pairs_root is required for disaster training")
        class_names = list(cfg.disaster_classes)
        dconf = _diffusion_config(cfg, class_count=len(class_names) + 1)
        batch_fn = _disaster_batch_fn(Path(cfg.pairs_root), class_names, cfg.batch_size)
        meta = {"kind": "disaster", "cities": [], "aux_labels": class_names}
    else:
        store = _load_store(cfg)
        pairs = list(store.iter_pairs())
        if cfg.cities:
            pairs = [p for p in pairs if p.city in cfg.cities]
        if not pairs:
            raise DataError("no tiles matched the requested cities")
        cities = CityIndex(sorted({p.city for p in pairs}))
        dconf = _diffusion_config(cfg, class_count=cities.class_count)
        wrong = [p for p in pairs if p.size != dconf.resolution]
        if wrong:
            raise DataError(f"{len(wrong)} tiles do not match the training resolution {dconf.resolution}")
        ids = [cities.id_of(p.city) for p in pairs]
        batch_fn = _tile_batch_fn(pairs, ids, cfg.model_kind, cfg.batch_size)
        meta = {"kind": cfg.model_kind, "cities": cities.names,
                "aux_labels": ["buildings-roads", "greenspace-water"] if cfg.model_kind == "basemap" else []}

    schedule = build_schedule(dconf.T)
    if cfg.resume:
        state, old_meta = load_checkpoint(cfg.resume, expected_config=dconf)
        meta = {"kind": old_meta["kind"], "cities": old_meta["cities"], "aux_labels": old_meta["aux_labels"]}
        print(f"resuming from iteration {state.iteration}")
        state.set_lr(cfg.lr)
    else:
        state = ModelState.build(dconf, seed=seed, lr=cfg.lr)

    out = Path(cfg.out)
    metrics_path = out.with_suffix(out.suffix + ".metrics.jsonl")
    rng = torch.Generator().manual_seed(seed + state.iteration)
    losses = train_model(
        state, schedule, batch_fn, cfg.iterations, rng,
        metrics_path=metrics_path, checkpoint_path=out, checkpoint_meta=meta,
    )
    head = sum(losses[:10]) / len(losses[:10])
    tail = sum(losses[-10:]) / len(losses[-10:])
    print(f"trained {cfg.iterations} iterations; loss {head:.4f} -> {tail:.4f}")
    print(f"checkpoint: {out}")
    return EXIT_OK


def _load_bundle_pair(path: str):
    state, meta = load_checkpoint(path)
    return state, build_schedule(state.config.T), meta


def cmd_sample(cfg: RunConfig) -> int:
    seed = _require_seed(cfg)
    if not cfg.checkpoint or not cfg.out:
        raise ConfigError("checkpoint and out are required")
    state, schedule, meta = _load_bundle_pair(cfg.checkpoint)
    cities = CityIndex(meta["cities"]) if meta["cities"] else None
    if cfg.city:
        if cities is None or cfg.city not in cities:
            raise ConfigError(f"city {cfg.city!r} unknown to this checkpoint")
        city_id = cities.id_of(cfg.city)
    else:
        city_id = None

    mode = BasemapMode(cfg.mode)
    reference = None
    if cfg.reference:
        if not Path(cfg.reference).is_dir():
            raise DataError(f"reference must be a tile directory: {cfg.reference}")
        reference = load_pair_dir(cfg.reference)
    basemap_model = None
    if cfg.basemap_checkpoint:
        b_state, b_sched, _ = _load_bundle_pair(cfg.basemap_checkpoint)
        basemap_model = (b_state, b_sched)

    result = generate_fully_synthetic(
        (state, schedule), mode, city_id if city_id is not None else 0, seed,
        basemap_model=basemap_model, reference=reference, cfg_scale=cfg.cfg_scale,
    )
    image = result.image
    if cfg.color_match_reference:
        ref_img = load_png(cfg.color_match_reference)
        matched = color_match(to_unit(image), to_unit(ref_img))
        image = to_uint8(matched.image)
        if matched.degenerate_channels:
            print(f"color match: degenerate channels {matched.degenerate_channels}")
    save_png(cfg.out, image)
    print(f"wrote {cfg.out}")
    return EXIT_OK


def cmd_inpaint(cfg: RunConfig) -> int:
    seed = _require_seed(cfg)
    for key in ("checkpoint", "reference", "mask", "out"):
        if not getattr(cfg, key):
            raise ConfigError(f"{key} is required")
    state, schedule, meta = _load_bundle_pair(cfg.checkpoint)
    reference = load_png(cfg.reference)
    mask = load_mask_bitmap(cfg.mask)
    basemap = load_png(cfg.basemap) if cfg.basemap else None
    city_id = None
    if cfg.city:
        cities = CityIndex(meta["cities"])
        city_id = cities.id_of(cfg.city)
    out = inpaint_image(
        state, schedule, reference, mask, seed,
        cond_basemap=basemap, city_id=city_id, cfg_scale=cfg.cfg_scale,
    )
    save_png(cfg.out, out)
    print(f"wrote {cfg.out}")
    return EXIT_OK


def _load_bundles(cfg: RunConfig) -> dict[str, ModelBundle]:
    if not cfg.models:
        raise ConfigError("models mapping (id -> checkpoints) is required")
    bundles: dict[str, ModelBundle] = {}
    for model_id, spec in cfg.models.items():
        if not isinstance(spec, dict) or "checkpoint" not in spec:
            raise ConfigError(f"models.{model_id} must be a mapping with a checkpoint key")
        state, schedule, meta = _load_bundle_pair(spec["checkpoint"])
        basemap = None
        if spec.get("basemap_checkpoint"):
            b_state, b_sched, _ = _load_bundle_pair(spec["basemap_checkpoint"])
            basemap = (b_state, b_sched)
        bundles[model_id] = ModelBundle(
            image=(state, schedule),
            city_index=CityIndex(meta["cities"]),
            basemap=basemap,
        )
    return bundles


def cmd_build_dataset(cfg: RunConfig) -> int:
    seed = _require_seed(cfg)
    if not cfg.out:
        raise ConfigError("out (dataset root) is required")
    store = _load_store(cfg)
    generators = tuple(cfg.mask_generators)
    policy = SplitPolicy(
        p_pristine=cfg.p_pristine,
        mask_generators=generators,
        footprint_only_models=("MB18",) if "grabcut" in generators else (),
    )
    roster = sorted(cfg.models) if cfg.models else None
    if cfg.plan_only:
        from .dataset import plan_split, pool_from_store

        manifest = plan_split(pool_from_store(store, cfg.cities or None), cfg.split, cfg.n, seed,
                              policy=policy, model_roster=roster)
        out = Path(cfg.out) / cfg.split / "manifest.plan.jsonl"
        manifest.save(out)
        print(f"planned {len(manifest.records)} records -> {out}")
        print(f"manifest digest: {manifest.digest()}")
        return EXIT_OK
    bundles = _load_bundles(cfg)
    manifest = build_split(
        store, bundles, cfg.split, cfg.n, seed, cfg.out,
        cities=cfg.cities or None, policy=policy, model_roster=roster,
    )
    report = validate_manifest(manifest, Path(cfg.out) / cfg.split, store=store)
    report_path = Path(cfg.out) / cfg.split / "validation.json"
    report_path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    print(f"built {len(manifest.records)} records under {cfg.out}/{cfg.split}")
    print(f"manifest digest: {manifest.digest()}")
    print(f"validation: {'ok' if report.ok else f'{len(report.violations)} violations'}")
    return EXIT_OK if report.ok else EXIT_DATA


def _parse_adapter_spec(spec, manifest, data_root, kind: str):
    """Adapter specs: 'builtin:<name>' or dicts for subprocess adapters."""
    if isinstance(spec, str):
        if spec.startswith("builtin:"):
            name = spec.split(":", 1)[1]
            table = reference_detectors() if kind == "detector" else reference_localizers(data_root=data_root)
            if name not in table:
                raise ConfigError(f"unknown builtin adapter {name!r}; have {sorted(table)}")
            return table[name], None
        raise ConfigError(f"unparseable adapter spec {spec!r}")
    if isinstance(spec, dict) and "command" in spec:
        name = spec.get("name", "external")
        if kind == "detector":
            sub = SubprocessDetector(name, list(spec["command"]),
                                     original_threshold=float(spec.get("original_threshold", 0.5)),
                                     role=spec.get("role", "both"))
            scores = subprocess_detector_scores(sub, manifest, data_root)
            adapter = DetectorAdapter(name, lambda img, r: scores[r.image_id],
                                      original_threshold=sub.original_threshold, role=sub.role)
            return adapter, {name: scores}
        sub = SubprocessLocalizer(name, list(spec["command"]))
        return subprocess_localizer_adapter(sub, manifest, data_root), None
    raise ConfigError(f"unparseable adapter spec {spec!r}")


def cmd_evaluate(cfg: RunConfig) -> int:
    if not cfg.manifest:
        raise ConfigError("manifest is required")
    manifest = DatasetManifest.load(cfg.manifest)
    data_root = Path(cfg.data_root) if cfg.data_root else Path(cfg.manifest).parent
    if not cfg.detectors:
        raise ConfigError("at least one detector adapter is required")

    detectors, localizers = [], []
    scores_cache: dict = {}
    for spec in cfg.detectors:
        adapter, cache = _parse_adapter_spec(spec, manifest, data_root, "detector")
        detectors.append(adapter)
        if cache:
            scores_cache.update(cache)
    for spec in cfg.localizers:
        adapter, _ = _parse_adapter_spec(spec, manifest, data_root, "localizer")
        localizers.append(adapter)

    pairs = []
    if len(detectors) >= 2:
        pairs = [(STRATEGY_DETECTOR_FIRST, detectors[0], detectors[1]),
                 (STRATEGY_SPLICER_FIRST, detectors[0], detectors[1])]

    thr = cfg.localization_threshold
    if isinstance(thr, str) and thr != "calibrated":
        thr = float(thr)
    report = evaluate(
        manifest, data_root, detectors, localizers or None, pairs or None,
        localization_threshold=thr, scores_cache=scores_cache or None,
    )
    out_dir = Path(cfg.out) if cfg.out else data_root
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(report.dumps())
    (out_dir / "report.txt").write_text(report.render_text())
    print(report.render_text())
    if not cfg.localizers:
        print("localization: skipped (no localizer adapters given)")
    print(f"report: {out_dir / 'report.json'}")
    return EXIT_OK


def cmd_serve(cfg: RunConfig) -> int:
    if not cfg.checkpoint:
        raise ConfigError("checkpoint is required")
    state, schedule, meta = _load_bundle_pair(cfg.checkpoint)
    if not meta["cities"]:
        raise DataError("checkpoint carries no city roster; cannot serve")
    store = TileStore(Path(cfg.tiles_root)) if cfg.tiles_root else None
    artifact_root = cfg.artifact_root or (Path(cfg.out or ".") / "artifacts")
    service = EditService(
        image_model=(state, schedule),
        city_index=CityIndex(meta["cities"]),
        artifact_root=artifact_root,
        tile_store=store,
        workers=cfg.workers,
    )
    app = create_app(service)
    import uvicorn

    print(f"serving on http://{cfg.host}:{cfg.port} (checkpoint {service.checkpoint_hash[:12]})")
    uvicorn.run(app, host=cfg.host, port=cfg.port, log_level="warning")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "sample": cmd_sample,
    "inpaint": cmd_inpaint,
    "build-dataset": cmd_build_dataset,
    "evaluate": cmd_evaluate,
    "serve": cmd_serve,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="terradiff", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML config file (strict keys)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)

    p = sub.add_parser("train", help="train an image/basemap/disaster model")
    common(p)
    p.add_argument("--tiles-root", dest="tiles_root")
    p.add_argument("--pairs-root", dest="pairs_root")
    p.add_argument("--model-kind", dest="model_kind", choices=["image", "basemap", "disaster"])
    p.add_argument("--preset", choices=["toy", "paper"])
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--resolution", type=int, default=None)
    p.add_argument("--base-channels", dest="base_channels", type=int, default=None)
    p.add_argument("--timesteps", type=int, default=None)
    p.add_argument("--resume", default=None)
    p.add_argument("--cities", nargs="*", default=None)

    p = sub.add_parser("sample", help="generate a fully synthetic image")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--basemap-checkpoint", dest="basemap_checkpoint")
    p.add_argument("--city")
    p.add_argument("--mode", choices=[m.value for m in BasemapMode])
    p.add_argument("--reference", help="tile directory for truth-mode conditioning")
    p.add_argument("--cfg-scale", dest="cfg_scale", type=float, default=None)
    p.add_argument("--color-match-reference", dest="color_match_reference")

    p = sub.add_parser("inpaint", help="regenerate a masked region of an image")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--reference", help="satellite PNG")
    p.add_argument("--basemap", help="conditioning basemap PNG")
    p.add_argument("--mask", help="mask PNG (255 = regenerate)")
    p.add_argument("--city")
    p.add_argument("--cfg-scale", dest="cfg_scale", type=float, default=None)

    p = sub.add_parser("build-dataset", help="assemble a train/test forensic split")
    common(p)
    p.add_argument("--tiles-root", dest="tiles_root")
    p.add_argument("--split", choices=["train", "test"])
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--p-pristine", dest="p_pristine", type=float, default=None)
    p.add_argument("--plan-only", dest="plan_only", action="store_const", const=True, default=None)
    p.add_argument("--cities", nargs="*", default=None)

    p = sub.add_parser("evaluate", help="run the forensic benchmark harness")
    common(p)
    p.add_argument("--manifest")
    p.add_argument("--data-root", dest="data_root")
    p.add_argument("--detector", dest="detectors", action="append", default=None,
                   help="builtin:<name>; repeatable (subprocess adapters via config file)")
    p.add_argument("--localizer", dest="localizers", action="append", default=None)
    p.add_argument("--localization-threshold", dest="localization_threshold", default=None)

    p = sub.add_parser("serve", help="run the generation/editing HTTP service")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--tiles-root", dest="tiles_root")
    p.add_argument("--host")
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--artifact-root", dest="artifact_root")

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    try:
        cfg = RunConfig.load(args.config, overrides)
        print(f"config digest: {cfg.digest()}")
        return COMMANDS[args.command](cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except AdapterError as e:
        print(f"adapter error: {e}", file=sys.stderr)
        return EXIT_ADAPTER
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
