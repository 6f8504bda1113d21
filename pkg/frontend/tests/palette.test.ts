import { describe, expect, it } from "vitest";

import { isPalettePure, nearestPaletteIndex, PaletteEntry, quantizeToPalette } from "../src/palette.js";

const PALETTE: PaletteEntry[] = [
  { name: "background", rgb: [233, 226, 207] },
  { name: "water", rgb: [64, 120, 200] },
  { name: "roads", rgb: [255, 255, 255] },
];

describe("nearestPaletteIndex", () => {
  it("picks the euclidean-nearest entry", () => {
    expect(nearestPaletteIndex(PALETTE, 60, 118, 198)).toBe(1);
    expect(nearestPaletteIndex(PALETTE, 250, 250, 250)).toBe(2);
  });

  it("breaks ties toward the earliest entry", () => {
    const pal: PaletteEntry[] = [
      { name: "a", rgb: [10, 0, 0] },
      { name: "b", rgb: [30, 0, 0] },
    ];
    expect(nearestPaletteIndex(pal, 20, 0, 0)).toBe(0);
  });
});

describe("quantizeToPalette", () => {
  it("produces palette-pure output and is idempotent", () => {
    const data = new Uint8Array([0, 0, 0, 70, 110, 190, 240, 240, 240, 233, 226, 207]);
    quantizeToPalette(data, PALETTE);
    expect(isPalettePure(data, PALETTE)).toBe(true);
    const once = data.slice();
    quantizeToPalette(data, PALETTE);
    expect(data).toEqual(once);
  });
});
