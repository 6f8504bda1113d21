"""Generation recipes: fully synthetic images, two-stage partial manipulation,
masked inpainting, compound editing sessions, and conditional style transfer.

Seeds: every pipeline takes one seed and derives per-stage child seeds with a
stable hash, so a provenance record (mode, class, city, seed) plus the same
checkpoints regenerates each artifact bit-exactly.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from enum import Enum

import cv2
import numpy as np
import torch

from .diffusion import GuidanceHook, ModelState, ancestral_sample
from .errors import ConfigError, DataError
from .imageops import sat_to_tensor, tensor_to_sat
from .masks import Mask
from .palette import DEFAULT_PALETTE, LayerPalette, off_palette_count, simplify_basemap
from .schedule import NoiseSchedule
from .tiles import TilePair

logger = logging.getLogger(__name__)


class BasemapMode(str, Enum):
    TRUTH = "truth"
    GENERATED = "generated"
    NONE = "none"


class ManipulationClass(str, Enum):
    BUILDINGS_ROADS = "buildings-roads"
    GREENSPACE_WATER = "greenspace-water"


# auxiliary-table ids for the basemap model; 0 is the null class
MANIP_AUX_ID = {ManipulationClass.BUILDINGS_ROADS: 1, ManipulationClass.GREENSPACE_WATER: 2}
MANIP_AUX_CLASS_COUNT = 3


def dominant_manip_aux_id(basemap: np.ndarray, palette: LayerPalette = DEFAULT_PALETTE) -> int:
    """Aux label for basemap-model training: 1 if buildings/roads dominate,
    2 if greenspace/water dominate, 0 (null) when neither does."""
    from .palette import layer_mask

    br = (layer_mask(basemap, "buildings", palette) | layer_mask(basemap, "roads", palette)).mean()
    gw = (layer_mask(basemap, "greenspace", palette) | layer_mask(basemap, "water", palette)).mean()
    if max(br, gw) < 0.05:
        return 0
    return 1 if br >= gw else 2


def derive_seed(seed: int, *salts) -> int:
    """Stable 63-bit child seed from a parent seed and string/int salts."""
    h = hashlib.sha256(("|".join([str(seed), *map(str, salts)])).encode()).digest()
    return int.from_bytes(h[:8], "big") >> 1


@dataclass(frozen=True)
class GenerationResult:
    image: np.ndarray                 # (H, W, 3) uint8
    basemap: np.ndarray | None        # conditioning basemap actually used (None for mode NONE)
    provenance: dict


def generate_fully_synthetic(
    image_model: tuple[ModelState, NoiseSchedule],
    mode: BasemapMode,
    city_id: int,
    seed: int,
    basemap_model: tuple[ModelState, NoiseSchedule] | None = None,
    reference: TilePair | None = None,
    cfg_scale: float = 1.0,
) -> GenerationResult:
    """One fully synthetic image under one of the three basemap modes.

    truth: condition on the reference pair's basemap.
    generated: first sample a basemap from the basemap model (conditioned on
      the city), then condition image sampling on it.
    none: fill the conditioning channels with Gaussian noise drawn from the
      seed, i.e. no meaningful basemap signal.
    """
    state, schedule = image_model
    mode = BasemapMode(mode)
    sample_seed = derive_seed(seed, "image")
    prov = {"mode": mode.value, "city_id": int(city_id), "seed": int(seed),
            "image_seed": sample_seed, "cfg_scale": cfg_scale}

    if mode is BasemapMode.TRUTH:
        if reference is None:
            raise ConfigError("truth basemap mode requires a reference tile pair")
        basemap = reference.basemap
    elif mode is BasemapMode.GENERATED:
        if basemap_model is None:
            raise ConfigError("generated basemap mode requires a basemap model")
        bm_state, bm_schedule = basemap_model
        bm_seed = derive_seed(seed, "basemap")
        bm = ancestral_sample(bm_state, bm_schedule, [bm_seed], class_id=city_id, cfg_scale=cfg_scale)[0]
        basemap = tensor_to_sat(bm)
        prov["basemap_seed"] = bm_seed
    else:
        basemap = None

    if basemap is not None:
        cond = sat_to_tensor(basemap)[None]
    else:
        g = torch.Generator().manual_seed(derive_seed(seed, "noise-basemap"))
        res = state.config.resolution
        cond = torch.randn((1, 3, res, res), generator=g)

    out = ancestral_sample(state, schedule, [sample_seed], cond_image=cond, class_id=city_id, cfg_scale=cfg_scale)
    return GenerationResult(image=tensor_to_sat(out[0]), basemap=basemap, provenance=prov)


def inpaint(
    state: ModelState,
    schedule: NoiseSchedule,
    reference: np.ndarray,
    mask_bitmap: np.ndarray,
    seed: int,
    cond_basemap: np.ndarray | None = None,
    city_id: int | None = None,
    aux_id: int | None = None,
    cfg_scale: float = 1.0,
    guidance: GuidanceHook | None = None,
) -> np.ndarray:
    """Regenerate the masked region of a reference image; keep the rest.

    The known (mask=0) region is re-imposed at every reverse step and taken
    verbatim from the reference at the end, so the output matches the
    reference bit-exactly outside the mask. A full mask reproduces plain
    sampling at the same seed; an empty mask returns the reference unchanged
    (flagged via a warning log).
    """
    ref = np.asarray(reference)
    mask_bitmap = np.asarray(mask_bitmap, dtype=bool)
    if ref.ndim != 3 or ref.shape[2] != 3:
        raise DataError(f"reference must be (H, W, 3), got {ref.shape}")
    if mask_bitmap.shape != ref.shape[:2]:
        raise DataError(f"mask shape {mask_bitmap.shape} does not match image {ref.shape[:2]}")
    if not mask_bitmap.any():
        logger.warning("inpaint called with an empty mask; returning the reference unchanged")
        return ref.copy()
    ref_t = sat_to_tensor(ref)[None]
    m = torch.from_numpy(mask_bitmap).to(torch.float32)[None, None]
    cond = sat_to_tensor(cond_basemap)[None] if cond_basemap is not None else None
    out = ancestral_sample(
        state, schedule, [seed],
        cond_image=cond, class_id=city_id, cfg_scale=cfg_scale, aux_id=aux_id,
        guidance=guidance, known=(ref_t, m),
    )
    return tensor_to_sat(out[0])


@dataclass(frozen=True)
class TwoStageResult:
    basemap: np.ndarray   # manipulated, palette-quantized basemap
    image: np.ndarray     # manipulated satellite image
    provenance: dict


def two_stage_manipulate(
    basemap_model: tuple[ModelState, NoiseSchedule],
    image_model: tuple[ModelState, NoiseSchedule],
    truth_pair: TilePair,
    mask: Mask | np.ndarray,
    manip_class: ManipulationClass,
    city_id: int,
    seed: int,
    palette: LayerPalette = DEFAULT_PALETTE,
    cfg_scale: float = 1.0,
) -> TwoStageResult:
    """Inpaint the truth basemap under the manipulation class, then inpaint the
    satellite conditioned on the manipulated basemap.

    Outside the mask both outputs equal their truth inputs exactly (the truth
    basemap is palette-pure, so quantizing the stage-1 output is the identity
    there). ``mask`` may be a raw bitmap; an empty one composes two no-ops and
    returns the truth inputs unchanged.
    """
    manip_class = ManipulationClass(manip_class)
    if isinstance(mask, Mask):
        bitmap = mask.bitmap
        mask_meta = {
            "mask_generator": mask.generator,
            "mask_seed": mask.seed,
            "mask_area_fraction": mask.area_fraction,
            "size_class": mask.size_class.value,
        }
    else:
        bitmap = np.asarray(mask, dtype=bool)
        mask_meta = {
            "mask_generator": None,
            "mask_seed": None,
            "mask_area_fraction": float(bitmap.mean()),
            "size_class": None,
        }
    bm_state, bm_schedule = basemap_model
    im_state, im_schedule = image_model
    stage1_seed = derive_seed(seed, "stage1-basemap")
    stage2_seed = derive_seed(seed, "stage2-image")
    try:
        raw_bm = inpaint(
            bm_state, bm_schedule, truth_pair.basemap, bitmap, stage1_seed,
            city_id=city_id, aux_id=MANIP_AUX_ID[manip_class], cfg_scale=cfg_scale,
        )
    except Exception as e:
        raise DataError(f"stage 1 (basemap inpainting) failed: {e}") from e
    bm_out = simplify_basemap(raw_bm, palette)
    try:
        img_out = inpaint(
            im_state, im_schedule, truth_pair.satellite, bitmap, stage2_seed,
            cond_basemap=bm_out, city_id=city_id, cfg_scale=cfg_scale,
        )
    except Exception as e:
        raise DataError(f"stage 2 (satellite inpainting) failed: {e}") from e
    prov = {
        "manip_class": manip_class.value,
        "city_id": int(city_id),
        "seed": int(seed),
        "stage1_seed": stage1_seed,
        "stage2_seed": stage2_seed,
        "source": truth_pair.source.tag,
        "cfg_scale": cfg_scale,
        **mask_meta,
    }
    return TwoStageResult(basemap=bm_out, image=img_out, provenance=prov)


def edit_mask_from_diff(prev_basemap: np.ndarray, edited_basemap: np.ndarray, margin: int = 4) -> np.ndarray:
    """Pixel-inequality mask between two basemaps, dilated by a square margin."""
    if prev_basemap.shape != edited_basemap.shape:
        raise DataError("basemap shapes differ")
    diff = (prev_basemap != edited_basemap).any(axis=-1)
    if margin > 0 and diff.any():
        k = np.ones((2 * margin + 1, 2 * margin + 1), dtype=np.uint8)
        diff = cv2.dilate(diff.astype(np.uint8), k).astype(bool)
    return diff


@dataclass
class EditStage:
    basemap: np.ndarray        # edited basemap (palette-pure)
    mask_bitmap: np.ndarray    # dilated diff against the previous stage
    satellite: np.ndarray      # inpainted satellite after this edit
    seed: int


@dataclass
class EditSession:
    """Ordered compound-editing history over one reference tile.

    Single-writer: edits are applied sequentially; each stage's input is the
    previous stage's output.
    """

    session_id: str
    reference: TilePair
    city_id: int
    base_seed: int = 0
    dilate_margin: int = 4
    stages: list[EditStage] = field(default_factory=list)

    @property
    def current_basemap(self) -> np.ndarray:
        return self.stages[-1].basemap if self.stages else self.reference.basemap

    @property
    def current_satellite(self) -> np.ndarray:
        return self.stages[-1].satellite if self.stages else self.reference.satellite


def compound_edit_step(
    session: EditSession,
    edited_basemap: np.ndarray,
    image_model: tuple[ModelState, NoiseSchedule],
    palette: LayerPalette = DEFAULT_PALETTE,
    cfg_scale: float = 1.0,
    seed: int | None = None,
) -> EditSession:
    """Apply one basemap edit: derive the mask from the diff, inpaint, append.

    An identity edit appends a stage with an empty mask and an unchanged
    image. Non-palette basemaps are rejected with the offending pixel count.
    """
    edited = np.asarray(edited_basemap)
    if edited.shape != session.reference.basemap.shape:
        raise DataError(f"edited basemap shape {edited.shape} mismatches reference")
    bad = off_palette_count(edited, palette)
    if bad:
        raise DataError(f"edited basemap is not palette-pure: {bad} offending pixels")
    if seed is None:
        seed = derive_seed(session.base_seed, "edit", len(session.stages))
    mask_bitmap = edit_mask_from_diff(session.current_basemap, edited, session.dilate_margin)
    if not mask_bitmap.any():
        satellite = session.current_satellite.copy()
    else:
        state, schedule = image_model
        satellite = inpaint(
            state, schedule, session.current_satellite, mask_bitmap, seed,
            cond_basemap=edited, city_id=session.city_id, cfg_scale=cfg_scale,
        )
    session.stages.append(EditStage(basemap=edited.copy(), mask_bitmap=mask_bitmap, satellite=satellite, seed=seed))
    return session


def style_transfer(
    disaster_model: tuple[ModelState, NoiseSchedule],
    source: np.ndarray,
    disaster_class_id: int,
    seed: int,
    guidance: GuidanceHook | None = None,
    cfg_scale: float = 1.0,
) -> np.ndarray:
    """Full-image conditional translation of a source image into a disaster style."""
    state, schedule = disaster_model
    if state.config.in_channels != 6:
        raise ConfigError("style transfer needs an image-to-image (6-channel) model")
    cond = sat_to_tensor(np.asarray(source))[None]
    out = ancestral_sample(
        state, schedule, [seed], cond_image=cond, class_id=disaster_class_id,
        cfg_scale=cfg_scale, guidance=guidance,
    )
    return tensor_to_sat(out[0])
