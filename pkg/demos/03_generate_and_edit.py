"""Generation recipes on the toy checkpoints from demo 02.

Shows the three fully-synthetic basemap modes, masked inpainting, the
two-stage partial manipulation, and an iterative compound-editing session.

Run:  python demos/02_train_toy_models.py && python demos/03_generate_and_edit.py
"""
from pathlib import Path

import numpy as np
from PIL import Image

from terradiff import (
    BasemapMode,
    DEFAULT_PALETTE,
    EditSession,
    GeoCoordinate,
    ManipulationClass,
    Provider,
    SourceTag,
    TilePair,
    bezier_mask,
    build_schedule,
    compound_edit_step,
    generate_fully_synthetic,
    inpaint,
    load_checkpoint,
    procedural_rasters,
    two_stage_manipulate,
)

OUT = Path(__file__).parent / "_out"
SIZE = 32


def load(name):
    state, meta = load_checkpoint(OUT / name)
    return state, build_schedule(state.config.T)


def reference_pair(seed=5, coord=GeoCoordinate(12.0, 44.0)):
    sat, bmp = procedural_rasters(seed, coord, SIZE)
    return TilePair(satellite=sat, basemap=bmp, coord=coord,
                    source=SourceTag(Provider.PROC, 16), city="demopolis")


def row(images):
    return np.concatenate([np.asarray(im) for im in images], axis=1)


def main():
    if not (OUT / "image.pt").exists():
        raise SystemExit("run demos/02_train_toy_models.py first")
    image_model = load("image.pt")
    basemap_model = load("basemap.pt")
    ref = reference_pair()

    # fully synthetic, all three basemap-conditioning modes
    panels = [ref.satellite, ref.basemap]
    for mode in (BasemapMode.TRUTH, BasemapMode.GENERATED, BasemapMode.NONE):
        res = generate_fully_synthetic(image_model, mode, city_id=1, seed=42,
                                       basemap_model=basemap_model, reference=ref)
        panels.append(res.image)
        print(f"mode={mode.value}: provenance {res.provenance}")
    Image.fromarray(row(panels)).save(OUT / "03_fully_synthetic.png")
    print("wrote", OUT / "03_fully_synthetic.png",
          "(reference sat, reference map, truth / generated / none modes)")

    # masked inpainting keeps the known region bit-exact
    mask = bezier_mask(SIZE, 0.15, seed=3)
    painted = inpaint(image_model[0], image_model[1], ref.satellite, mask.bitmap, seed=9,
                      cond_basemap=ref.basemap, city_id=1)
    assert np.array_equal(painted[~mask.bitmap], ref.satellite[~mask.bitmap])
    mask_rgb = np.repeat(mask.bitmap[:, :, None].astype(np.uint8) * 255, 3, axis=2)
    Image.fromarray(row([ref.satellite, mask_rgb, painted])).save(OUT / "03_inpaint.png")
    print("wrote", OUT / "03_inpaint.png", f"(mask {mask.size_class.value}, {mask.area_fraction:.3f} of image)")

    # two-stage partial manipulation: basemap first, then the image
    res = two_stage_manipulate(basemap_model, image_model, ref, mask,
                               ManipulationClass.BUILDINGS_ROADS, city_id=1, seed=12)
    Image.fromarray(row([ref.basemap, res.basemap, ref.satellite, res.image])).save(OUT / "03_two_stage.png")
    print("wrote", OUT / "03_two_stage.png", "(truth map, manipulated map, truth sat, manipulated sat)")

    # compound editing: paint the basemap, inpaint, repeat
    session = EditSession("demo", ref, city_id=1, base_seed=99)
    edit1 = ref.basemap.copy()
    edit1[4:12, 4:12] = DEFAULT_PALETTE.color("water")
    compound_edit_step(session, edit1, image_model)
    edit2 = session.current_basemap.copy()
    edit2[18:28, 14:26] = DEFAULT_PALETTE.color("buildings")
    compound_edit_step(session, edit2, image_model)
    frames = [ref.satellite] + [s.satellite for s in session.stages]
    Image.fromarray(row(frames)).save(OUT / "03_compound.png")
    print("wrote", OUT / "03_compound.png", f"({len(session.stages)} sequential edits; "
          "pixels outside the union of edit masks still equal the original)")


if __name__ == "__main__":
    main()
