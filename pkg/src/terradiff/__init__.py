"""terradiff: conditioned diffusion over overhead imagery, forensic dataset
assembly, and detection/localization benchmarking."""

__version__ = "0.1.0"

from .diffusion import (
    DiffusionConfig,
    GuidanceHook,
    ModelState,
    TrainBatch,
    ancestral_sample,
    load_checkpoint,
    predict_eps,
    sample,
    save_checkpoint,
    train_model,
    train_step,
)
from .geo import CityIndex, CityRegion, CityRegistry, GeoCoordinate, Provider, SourceTag, sample_coordinates
from .masks import Mask, SizeClass, bezier_mask, grabcut_mask, size_class
from .metrics import auc_score, balanced_accuracy_at, calibrate_threshold, mcc, mcc_from_masks
from .palette import DEFAULT_PALETTE, LayerPalette, simplify_basemap
from .pipelines import (
    BasemapMode,
    EditSession,
    ManipulationClass,
    compound_edit_step,
    generate_fully_synthetic,
    inpaint,
    style_transfer,
    two_stage_manipulate,
)
from .procedural import procedural_rasters
from .providers import ProceduralClient, fetch_pair
from .schedule import NoiseSchedule, build_schedule, forward_noise
from .tiles import TilePair, TileStore

__all__ = [
    "DiffusionConfig", "GuidanceHook", "ModelState", "TrainBatch", "ancestral_sample",
    "load_checkpoint", "predict_eps", "sample", "save_checkpoint", "train_model", "train_step",
    "CityIndex", "CityRegion", "CityRegistry", "GeoCoordinate", "Provider", "SourceTag",
    "sample_coordinates", "Mask", "SizeClass", "bezier_mask", "grabcut_mask", "size_class",
    "auc_score", "balanced_accuracy_at", "calibrate_threshold", "mcc", "mcc_from_masks",
    "DEFAULT_PALETTE", "LayerPalette", "simplify_basemap",
    "BasemapMode", "EditSession", "ManipulationClass", "compound_edit_step",
    "generate_fully_synthetic", "inpaint", "style_transfer", "two_stage_manipulate",
    "procedural_rasters", "ProceduralClient", "fetch_pair",
    "NoiseSchedule", "build_schedule", "forward_noise", "TilePair", "TileStore",
]
