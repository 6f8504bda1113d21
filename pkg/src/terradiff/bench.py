"""Forensic benchmark harness: binary detection tasks with calibration,
hierarchical 3-way classification, and size-bucketed localization.

Adapters are pluggable scorers. In-process adapters are callables receiving
(image, record); third-party models plug in through a subprocess protocol
(image paths on stdin, scores or heatmap paths on stdout), keeping foreign
runtimes out of this process.
"""
from __future__ import annotations

import hashlib
import json
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import cv2
import numpy as np

from .dataset import (
    DatasetManifest,
    ManipulationRecord,
    TYPE_FULLY_SYNTHETIC,
    TYPE_PARTIALLY_MANIPULATED,
    TYPE_PRISTINE,
)
from .errors import AdapterError, DataError
from .masks import SizeClass, load_mask_bitmap
from .metrics import (
    ConfusionCounts,
    auc_score,
    balanced_accuracy_at,
    calibrate_threshold,
    confusion_counts,
    mcc,
)
from .tiles import load_png

ROLE_SYNTHETIC = "synthetic"
ROLE_SPLICING = "splicing"
ROLE_BOTH = "both"


@dataclass
class DetectorAdapter:
    """Scalar scorer; higher means more synthetic/spliced."""

    name: str
    score_fn: Callable[[np.ndarray, ManipulationRecord | None], float]
    original_threshold: float = 0.5
    role: str = ROLE_BOTH

    def score(self, image: np.ndarray, record: ManipulationRecord | None = None) -> float:
        s = float(self.score_fn(image, record))
        if not np.isfinite(s):
            raise AdapterError(f"adapter {self.name!r} produced non-finite score {s}")
        return s


@dataclass
class LocalizerAdapter:
    """Heatmap scorer; per-pixel suspicion in [0, 1], image-shaped."""

    name: str
    heatmap_fn: Callable[[np.ndarray, ManipulationRecord | None], np.ndarray]

    def heatmap(self, image: np.ndarray, record: ManipulationRecord | None = None) -> np.ndarray:
        h = np.asarray(self.heatmap_fn(image, record), dtype=np.float64)
        if h.shape != image.shape[:2]:
            raise AdapterError(
                f"adapter {self.name!r} heatmap shape {h.shape} mismatches image {image.shape[:2]}"
            )
        if not np.isfinite(h).all() or h.min() < 0 or h.max() > 1:
            raise AdapterError(f"adapter {self.name!r} heatmap must lie in [0, 1]")
        return h


@dataclass(frozen=True)
class BinaryTask:
    name: str
    positives: tuple[str, ...]
    negatives: tuple[str, ...]
    roles: tuple[str, ...]  # adapter roles this task applies to


BINARY_TASKS = (
    BinaryTask("pristine_vs_fully", (TYPE_FULLY_SYNTHETIC,), (TYPE_PRISTINE,), (ROLE_SYNTHETIC,)),
    BinaryTask("pristine_vs_partially", (TYPE_PARTIALLY_MANIPULATED,), (TYPE_PRISTINE,), (ROLE_SYNTHETIC, ROLE_SPLICING)),
    BinaryTask("pristine_vs_any", (TYPE_FULLY_SYNTHETIC, TYPE_PARTIALLY_MANIPULATED), (TYPE_PRISTINE,), (ROLE_SYNTHETIC,)),
    BinaryTask("partially_vs_fully", (TYPE_PARTIALLY_MANIPULATED,), (TYPE_FULLY_SYNTHETIC,), (ROLE_SPLICING,)),
)


def task_applies(task: BinaryTask, role: str) -> bool:
    return role == ROLE_BOTH or role in task.roles


@dataclass
class TaskResult:
    auc: float
    acc_original: float
    acc_calibrated: float
    calibrated_threshold: float
    n_pos: int
    n_neg: int

    def to_dict(self) -> dict:
        return {
            "auc": self.auc,
            "acc_original": self.acc_original,
            "acc_calibrated": self.acc_calibrated,
            "calibrated_threshold": self.calibrated_threshold,
            "n_pos": self.n_pos,
            "n_neg": self.n_neg,
        }


def binary_task_eval(scores, labels, original_threshold: float) -> TaskResult:
    """AUC plus accuracy at the adapter's original and the calibrated threshold."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    auc = auc_score(scores, labels)
    acc_orig = balanced_accuracy_at(scores, labels, original_threshold)
    thr, acc_cal = calibrate_threshold(scores, labels)
    return TaskResult(
        auc=auc, acc_original=acc_orig, acc_calibrated=acc_cal, calibrated_threshold=thr,
        n_pos=int(labels.sum()), n_neg=int((~labels).sum()),
    )


def score_manifest(
    adapter: DetectorAdapter,
    manifest: DatasetManifest,
    data_root: Path | str,
) -> dict[str, float]:
    """Score every record, ordered by image id for deterministic reduction."""
    data_root = Path(data_root)
    out: dict[str, float] = {}
    for record in sorted(manifest.records, key=lambda r: r.image_id):
        img = load_png(data_root / record.image_path)
        out[record.image_id] = adapter.score(img, record)
    return out


def run_binary_tasks(
    adapters: list[DetectorAdapter],
    manifest: DatasetManifest,
    data_root: Path | str,
    scores_cache: dict[str, dict[str, float]] | None = None,
) -> dict:
    """Evaluate each adapter on its applicable tasks.

    A task with an empty class side is skipped with an explicit notice rather
    than erroring; adapter failures propagate as AdapterError.
    """
    by_type: dict[str, list[ManipulationRecord]] = {}
    for r in sorted(manifest.records, key=lambda r: r.image_id):
        by_type.setdefault(r.image_type, []).append(r)

    results: dict = {}
    for adapter in adapters:
        scores = (scores_cache or {}).get(adapter.name) or score_manifest(adapter, manifest, data_root)
        adapter_out: dict = {}
        for task in BINARY_TASKS:
            if not task_applies(task, adapter.role):
                continue
            pos = [r for t in task.positives for r in by_type.get(t, [])]
            neg = [r for t in task.negatives for r in by_type.get(t, [])]
            if not pos or not neg:
                adapter_out[task.name] = {"skipped": f"missing class: {'positives' if not pos else 'negatives'}"}
                continue
            ids = [r.image_id for r in pos + neg]
            s = np.array([scores[i] for i in ids])
            y = np.array([1] * len(pos) + [0] * len(neg), dtype=bool)
            adapter_out[task.name] = binary_task_eval(s, y, adapter.original_threshold).to_dict()
        results[adapter.name] = adapter_out
    return results


STRATEGY_DETECTOR_FIRST = "DetectorFirst"
STRATEGY_SPLICER_FIRST = "SplicerFirst"

_THREE_CLASSES = (TYPE_PRISTINE, TYPE_PARTIALLY_MANIPULATED, TYPE_FULLY_SYNTHETIC)


@dataclass
class ThreeWayResult:
    strategy: str
    confusion: dict           # confusion[true][pred] = count
    mean_class_accuracy: float
    detector_threshold: float
    splicer_threshold: float

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "confusion": self.confusion,
            "mean_class_accuracy": self.mean_class_accuracy,
            "detector_threshold": self.detector_threshold,
            "splicer_threshold": self.splicer_threshold,
        }


def _calibrate_for_role(adapter, scores, records, role) -> float:
    """Calibrate on the adapter's natural binary split of this manifest."""
    if role == ROLE_SYNTHETIC:
        labels = np.array([r.image_type != TYPE_PRISTINE for r in records])
    else:
        labels = np.array([r.image_type == TYPE_PARTIALLY_MANIPULATED for r in records])
    s = np.array([scores[r.image_id] for r in records])
    thr, _ = calibrate_threshold(s, labels)
    return thr


def hierarchical_3way(
    strategy: str,
    detector: DetectorAdapter,
    splicer: DetectorAdapter,
    manifest: DatasetManifest,
    data_root: Path | str,
    detector_threshold: float | None = None,
    splicer_threshold: float | None = None,
) -> ThreeWayResult:
    """Compose a synthetic detector and a splicing detector into 3 classes.

    DetectorFirst: detector says pristine -> pristine; otherwise the splicer
    splits partial vs fully. SplicerFirst: splice found -> partial; otherwise
    the detector splits fully vs pristine. Total: every input maps to exactly
    one class. Thresholds not supplied are calibrated on this manifest.
    """
    if strategy not in (STRATEGY_DETECTOR_FIRST, STRATEGY_SPLICER_FIRST):
        raise DataError(f"unknown strategy {strategy!r}")
    records = sorted(manifest.records, key=lambda r: r.image_id)
    if not records:
        raise DataError("empty manifest")
    det_scores = score_manifest(detector, manifest, data_root)
    spl_scores = score_manifest(splicer, manifest, data_root)
    if detector_threshold is None:
        detector_threshold = _calibrate_for_role(detector, det_scores, records, ROLE_SYNTHETIC)
    if splicer_threshold is None:
        splicer_threshold = _calibrate_for_role(splicer, spl_scores, records, ROLE_SPLICING)

    confusion = {t: {p: 0 for p in _THREE_CLASSES} for t in _THREE_CLASSES}
    for r in records:
        det_synth = det_scores[r.image_id] >= detector_threshold
        spl_found = spl_scores[r.image_id] >= splicer_threshold
        if strategy == STRATEGY_DETECTOR_FIRST:
            if not det_synth:
                pred = TYPE_PRISTINE
            elif spl_found:
                pred = TYPE_PARTIALLY_MANIPULATED
            else:
                pred = TYPE_FULLY_SYNTHETIC
        else:
            if spl_found:
                pred = TYPE_PARTIALLY_MANIPULATED
            elif det_synth:
                pred = TYPE_FULLY_SYNTHETIC
            else:
                pred = TYPE_PRISTINE
        confusion[r.image_type][pred] += 1

    accs = []
    for t in _THREE_CLASSES:
        row_total = sum(confusion[t].values())
        if row_total:
            accs.append(confusion[t][t] / row_total)
    return ThreeWayResult(
        strategy=strategy,
        confusion=confusion,
        mean_class_accuracy=float(np.mean(accs)) if accs else 0.0,
        detector_threshold=float(detector_threshold),
        splicer_threshold=float(splicer_threshold),
    )


_BUCKETS = tuple(sc.value for sc in SizeClass)
_THRESHOLD_GRID = np.round(np.arange(0.05, 1.0, 0.05), 2)


@dataclass
class LocalizationResult:
    per_bucket: dict          # bucket -> mean per-image MCC (or None if empty)
    overall: float
    threshold: float
    inverted: bool            # True when 1 - heatmap scored better
    calibrated: bool
    degenerate_images: int
    pooled: bool = False
    n_images: int = 0

    def to_dict(self) -> dict:
        return {
            "per_bucket": self.per_bucket,
            "overall": self.overall,
            "threshold": self.threshold,
            "inverted": self.inverted,
            "calibrated": self.calibrated,
            "degenerate_images": self.degenerate_images,
            "pooled": self.pooled,
            "n_images": self.n_images,
        }


def _localization_at(heatmaps, masks, buckets, threshold: float, inverted: bool, pooled: bool):
    per_image = []
    degenerate = 0
    pooled_counts: dict[str, ConfusionCounts] = {}
    all_counts = ConfusionCounts(0, 0, 0, 0)
    for h, m in zip(heatmaps, masks):
        hh = 1.0 - h if inverted else h
        pred = hh >= threshold
        c = confusion_counts(pred, m)
        v, degen = mcc(c)
        degenerate += int(degen)
        per_image.append(v)
        all_counts = all_counts + c
    if pooled:
        bucket_counts: dict[str, ConfusionCounts] = {}
        for c, b in zip([confusion_counts((1.0 - h if inverted else h) >= threshold, m) for h, m in zip(heatmaps, masks)], buckets):
            bucket_counts[b] = bucket_counts.get(b, ConfusionCounts(0, 0, 0, 0)) + c
        per_bucket = {b: (mcc(bucket_counts[b])[0] if b in bucket_counts else None) for b in _BUCKETS}
        overall, _ = mcc(all_counts)
    else:
        per_bucket = {}
        for b in _BUCKETS:
            vals = [v for v, bb in zip(per_image, buckets) if bb == b]
            per_bucket[b] = float(np.mean(vals)) if vals else None
        overall = float(np.mean(per_image)) if per_image else 0.0
    return per_bucket, overall, degenerate


def localization_eval(
    localizer: LocalizerAdapter,
    manifest: DatasetManifest,
    data_root: Path | str,
    threshold: float | str = "calibrated",
    pooled: bool = False,
) -> LocalizationResult:
    """MCC of binarized heatmaps vs ground-truth masks, bucketed by size class.

    Calibrated mode sweeps a fixed 0.05-step grid and both polarity
    conventions, maximizing overall MCC; fixed mode applies the given
    threshold with normal polarity.
    """
    data_root = Path(data_root)
    partial = [r for r in sorted(manifest.records, key=lambda r: r.image_id)
               if r.image_type == TYPE_PARTIALLY_MANIPULATED]
    if not partial:
        raise DataError("manifest has no partially-manipulated records")
    heatmaps, masks, buckets = [], [], []
    for r in partial:
        img = load_png(data_root / r.image_path)
        mask = load_mask_bitmap(data_root / r.mask_path)
        if mask.shape != img.shape[:2]:
            raise DataError(f"{r.image_id}: mask/image shape mismatch")
        heatmaps.append(localizer.heatmap(img, r))
        masks.append(mask)
        buckets.append(r.size_class)

    if threshold == "calibrated":
        best = None
        for inverted in (False, True):
            for thr in _THRESHOLD_GRID:
                per_bucket, overall, degen = _localization_at(heatmaps, masks, buckets, float(thr), inverted, pooled)
                key = (overall, not inverted, -thr)
                if best is None or key > best[0]:
                    best = (key, per_bucket, overall, float(thr), inverted, degen)
        _, per_bucket, overall, thr, inverted, degen = best
        return LocalizationResult(per_bucket, overall, thr, inverted, True, degen, pooled, len(partial))
    thr = float(threshold)
    per_bucket, overall, degen = _localization_at(heatmaps, masks, buckets, thr, False, pooled)
    return LocalizationResult(per_bucket, overall, thr, False, False, degen, pooled, len(partial))


# --- trivial reference adapters (harness plumbing, not forensic claims) -----

_TYPE_SCORE = {TYPE_PRISTINE: 0.0, TYPE_FULLY_SYNTHETIC: 0.5, TYPE_PARTIALLY_MANIPULATED: 1.0}


def _hash_unit(*parts) -> float:
    h = hashlib.sha256("|".join(map(str, parts)).encode()).digest()
    return int.from_bytes(h[:8], "big") / 2**64


def residual_energy_score(image: np.ndarray, record=None) -> float:
    """Mean absolute high-frequency residual; deterministic heuristic only."""
    gray = cv2.cvtColor(image, cv2.COLOR_RGB2GRAY).astype(np.float32)
    blur = cv2.GaussianBlur(gray, (5, 5), 1.2)
    return float(np.abs(gray - blur).mean() / 255.0)


def reference_detectors(seed: int = 0) -> dict[str, DetectorAdapter]:
    """Ground-truth oracle, anti-oracle, residual heuristic, and a seeded
    pseudo-random scorer. None of these claims forensic performance."""

    def oracle(img, record):
        if record is None:
            raise AdapterError("oracle adapter needs ground-truth records")
        return _TYPE_SCORE[record.image_type]

    def anti_oracle(img, record):
        return -oracle(img, record)

    def random_score(img, record):
        rid = record.image_id if record is not None else hashlib.sha256(img.tobytes()).hexdigest()
        return _hash_unit("det", seed, rid)

    return {
        "oracle": DetectorAdapter("oracle", oracle, original_threshold=0.25),
        "anti-oracle": DetectorAdapter("anti-oracle", anti_oracle, original_threshold=-0.25),
        "residual": DetectorAdapter("residual", residual_energy_score, original_threshold=0.05),
        "random": DetectorAdapter("random", random_score, original_threshold=0.5),
    }


def reference_localizers(seed: int = 0, data_root: Path | str | None = None) -> dict[str, LocalizerAdapter]:
    root = Path(data_root) if data_root is not None else None

    def _truth(record) -> np.ndarray:
        if record is None or record.mask_path is None or root is None:
            raise AdapterError("oracle localizer needs records with masks and a data root")
        return load_mask_bitmap(root / record.mask_path).astype(np.float64)

    def oracle(img, record):
        return _truth(record)

    def anti(img, record):
        return 1.0 - _truth(record)

    def random_map(img, record):
        rid = record.image_id if record is not None else "anon"
        rng = np.random.default_rng(int(_hash_unit("loc", seed, rid) * 2**32))
        return rng.random(img.shape[:2])

    return {
        "oracle": LocalizerAdapter("oracle", oracle),
        "anti-oracle": LocalizerAdapter("anti-oracle", anti),
        "random": LocalizerAdapter("random", random_map),
    }


# --- subprocess adapter protocol --------------------------------------------


def _run_adapter_process(command: list[str], lines: list[str], name: str) -> list[str]:
    try:
        proc = subprocess.run(
            command, input="\n".join(lines) + "\n", capture_output=True, text=True, timeout=3600,
        )
    except OSError as e:
        raise AdapterError(f"adapter {name!r}: failed to launch {command}: {e}") from e
    except subprocess.TimeoutExpired as e:
        raise AdapterError(f"adapter {name!r}: timed out") from e
    if proc.returncode != 0:
        raise AdapterError(f"adapter {name!r}: exit code {proc.returncode}: {proc.stderr[:300]}")
    out = [ln for ln in proc.stdout.splitlines() if ln.strip()]
    if len(out) != len(lines):
        raise AdapterError(
            f"adapter {name!r}: protocol violation, sent {len(lines)} paths, got {len(out)} lines"
        )
    return out


class SubprocessDetector(DetectorAdapter):
    """Detector in an external runtime: image paths on stdin, floats on stdout."""

    def __init__(self, name: str, command: list[str], original_threshold: float = 0.5, role: str = ROLE_BOTH):
        super().__init__(name=name, score_fn=self._unused, original_threshold=original_threshold, role=role)
        self.command = command

    def _unused(self, image, record):  # pragma: no cover - batch path only
        raise AdapterError(f"adapter {self.name!r} only supports batch scoring")

    def score_paths(self, paths: list[Path]) -> list[float]:
        out = _run_adapter_process(self.command, [str(p) for p in paths], self.name)
        try:
            return [float(x) for x in out]
        except ValueError as e:
            raise AdapterError(f"adapter {self.name!r}: non-numeric score line: {e}") from e


class SubprocessLocalizer(LocalizerAdapter):
    """Localizer in an external runtime: image paths in, heatmap paths out."""

    def __init__(self, name: str, command: list[str]):
        super().__init__(name=name, heatmap_fn=self._unused)
        self.command = command

    def _unused(self, image, record):  # pragma: no cover - batch path only
        raise AdapterError(f"adapter {self.name!r} only supports batch scoring")

    def heatmap_paths(self, paths: list[Path]) -> list[np.ndarray]:
        out = _run_adapter_process(self.command, [str(p) for p in paths], self.name)
        maps = []
        for ln in out:
            p = Path(ln)
            if not p.exists():
                raise AdapterError(f"adapter {self.name!r}: heatmap path does not exist: {p}")
            if p.suffix == ".npy":
                maps.append(np.load(p).astype(np.float64))
            else:
                raw = load_png(p)
                if raw.ndim == 3:
                    raw = raw[..., 0]
                maps.append(raw.astype(np.float64) / 255.0)
        return maps


def subprocess_detector_scores(adapter: SubprocessDetector, manifest: DatasetManifest, data_root: Path | str) -> dict[str, float]:
    data_root = Path(data_root)
    records = sorted(manifest.records, key=lambda r: r.image_id)
    scores = adapter.score_paths([data_root / r.image_path for r in records])
    return {r.image_id: s for r, s in zip(records, scores)}


def subprocess_localizer_adapter(adapter: SubprocessLocalizer, manifest: DatasetManifest, data_root: Path | str) -> LocalizerAdapter:
    """Precompute subprocess heatmaps and wrap them as an in-process adapter."""
    data_root = Path(data_root)
    partial = [r for r in sorted(manifest.records, key=lambda r: r.image_id)
               if r.image_type == TYPE_PARTIALLY_MANIPULATED]
    maps = adapter.heatmap_paths([data_root / r.image_path for r in partial])
    table = {r.image_id: m for r, m in zip(partial, maps)}

    def lookup(img, record):
        try:
            return table[record.image_id]
        except (KeyError, AttributeError):
            raise AdapterError(f"adapter {adapter.name!r}: no heatmap for record") from None

    return LocalizerAdapter(adapter.name, lookup)


# --- report assembly ---------------------------------------------------------


@dataclass
class EvalReport:
    manifest_digest: str
    split: str
    binary: dict = field(default_factory=dict)
    three_way: dict = field(default_factory=dict)
    localization: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "manifest_digest": self.manifest_digest,
            "split": self.split,
            "accuracy_averaging": "macro",
            "localization_averaging": "per-image-then-bucket",
            "binary": self.binary,
            "three_way": self.three_way,
            "localization": self.localization,
            "notes": self.notes,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def render_text(self) -> str:
        lines = [f"EvalReport  split={self.split}  manifest={self.manifest_digest[:12]}", ""]
        if self.binary:
            lines.append("Binary tasks (AUC / acc calibrated / acc original)")
            tasks = [t.name for t in BINARY_TASKS]
            width = max(len(t) for t in tasks) + 2
            header = "task".ljust(width) + "".join(a.ljust(24) for a in self.binary)
            lines.append(header)
            for t in tasks:
                row = t.ljust(width)
                for adapter, res in self.binary.items():
                    cell = res.get(t)
                    if cell is None:
                        row += "-".ljust(24)
                    elif "skipped" in cell:
                        row += "skipped".ljust(24)
                    else:
                        row += f"{cell['auc']:.2f}/{cell['acc_calibrated']:.2f}/{cell['acc_original']:.2f}".ljust(24)
                lines.append(row)
            lines.append("")
        if self.three_way:
            lines.append("Hierarchical 3-way (mean per-class accuracy)")
            for key, res in self.three_way.items():
                lines.append(f"  {key}: {res['mean_class_accuracy']:.3f}")
            lines.append("")
        if self.localization:
            lines.append("Localization MCC by region size")
            buckets = list(_BUCKETS)
            width = max(len(b) for b in buckets + ["Overall"]) + 2
            lines.append("size".ljust(width) + "".join(a.ljust(16) for a in self.localization))
            for b in buckets + ["Overall"]:
                row = b.ljust(width)
                for adapter, res in self.localization.items():
                    if "skipped" in res:
                        row += "skipped".ljust(16)
                        continue
                    v = res["overall"] if b == "Overall" else res["per_bucket"].get(b)
                    row += ("-" if v is None else f"{v:.3f}").ljust(16)
                lines.append(row)
            lines.append("")
        return "\n".join(lines)


def evaluate(
    manifest: DatasetManifest,
    data_root: Path | str,
    detectors: list[DetectorAdapter],
    localizers: list[LocalizerAdapter] | None = None,
    three_way_pairs: list[tuple[str, DetectorAdapter, DetectorAdapter]] | None = None,
    localization_threshold: float | str = "calibrated",
    pooled_localization: bool = False,
    scores_cache: dict[str, dict[str, float]] | None = None,
) -> EvalReport:
    """Full harness pass; deterministic for fixed inputs."""
    report = EvalReport(manifest_digest=manifest.digest(), split=manifest.split)
    report.binary = run_binary_tasks(detectors, manifest, data_root, scores_cache=scores_cache)
    for strategy, det, spl in three_way_pairs or []:
        res = hierarchical_3way(strategy, det, spl, manifest, data_root)
        report.three_way[f"{strategy}({det.name},{spl.name})"] = res.to_dict()
    has_partial = any(r.image_type == TYPE_PARTIALLY_MANIPULATED for r in manifest.records)
    for loc in localizers or []:
        if not has_partial:
            report.localization[loc.name] = {"skipped": "no partially-manipulated records"}
            continue
        res = localization_eval(loc, manifest, data_root, threshold=localization_threshold, pooled=pooled_localization)
        report.localization[loc.name] = res.to_dict()
    return report
