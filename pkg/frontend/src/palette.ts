/** Basemap layer palette handling and client-side quantization.
 *
 * The UI must never send non-palette pixels: every canvas is quantized to
 * the nearest palette color (ties resolve to the earliest-registered entry,
 * mirroring the server's rule) before submission.
 */

export type RGB = [number, number, number];

export interface PaletteEntry {
  name: string;
  rgb: RGB;
}

export function nearestPaletteIndex(palette: PaletteEntry[], r: number, g: number, b: number): number {
  let best = 0;
  let bestDist = Infinity;
  for (let i = 0; i < palette.length; i++) {
    const [pr, pg, pb] = palette[i].rgb;
    const d = (r - pr) ** 2 + (g - pg) ** 2 + (b - pb) ** 2;
    if (d < bestDist) {
      bestDist = d;
      best = i;
    }
  }
  return best;
}

/** In-place nearest-color quantization of an RGB buffer. */
export function quantizeToPalette(data: Uint8Array, palette: PaletteEntry[]): void {
  for (let i = 0; i < data.length; i += 3) {
    const idx = nearestPaletteIndex(palette, data[i], data[i + 1], data[i + 2]);
    const [r, g, b] = palette[idx].rgb;
    data[i] = r;
    data[i + 1] = g;
    data[i + 2] = b;
  }
}

export function isPalettePure(data: Uint8Array, palette: PaletteEntry[]): boolean {
  outer: for (let i = 0; i < data.length; i += 3) {
    for (const { rgb } of palette) {
      if (data[i] === rgb[0] && data[i + 1] === rgb[1] && data[i + 2] === rgb[2]) continue outer;
    }
    return false;
  }
  return true;
}
