/** DOM-free pixel buffer with brush strokes and an undo stack.
 *
 * A stroke stamps a square brush along the interpolated path and sets the
 * touched pixels to exactly the layer color; the returned patch holds the
 * previous bytes so undo restores the buffer bit-for-bit.
 */

import type { RGB } from "./palette.js";

export interface PathPoint {
  x: number;
  y: number;
}

export interface UndoPatch {
  /** flat pixel indices (row-major) and their previous RGB bytes */
  indices: number[];
  previous: Uint8Array;
}

export class PixelBuffer {
  readonly width: number;
  readonly height: number;
  readonly data: Uint8Array; // RGB, row-major

  constructor(width: number, height: number, data?: Uint8Array) {
    this.width = width;
    this.height = height;
    if (data !== undefined && data.length !== width * height * 3) {
      throw new Error(`buffer size ${data.length} does not match ${width}x${height} RGB`);
    }
    this.data = data ?? new Uint8Array(width * height * 3);
  }

  clone(): PixelBuffer {
    return new PixelBuffer(this.width, this.height, this.data.slice());
  }

  equals(other: PixelBuffer): boolean {
    if (other.width !== this.width || other.height !== this.height) return false;
    for (let i = 0; i < this.data.length; i++) {
      if (this.data[i] !== other.data[i]) return false;
    }
    return true;
  }

  getPixel(x: number, y: number): RGB {
    const o = (y * this.width + x) * 3;
    return [this.data[o], this.data[o + 1], this.data[o + 2]];
  }
}

function stampBrush(buf: PixelBuffer, cx: number, cy: number, radius: number, touched: Set<number>): void {
  const x0 = Math.max(0, Math.floor(cx - radius));
  const x1 = Math.min(buf.width - 1, Math.ceil(cx + radius));
  const y0 = Math.max(0, Math.floor(cy - radius));
  const y1 = Math.min(buf.height - 1, Math.ceil(cy + radius));
  for (let y = y0; y <= y1; y++) {
    for (let x = x0; x <= x1; x++) {
      if (Math.abs(x - cx) <= radius && Math.abs(y - cy) <= radius) {
        touched.add(y * buf.width + x);
      }
    }
  }
}

/** Paint a stroke; returns the inverse patch (empty for a zero-length path). */
export function paintStroke(buf: PixelBuffer, color: RGB, path: PathPoint[], brushSize: number): UndoPatch {
  const touched = new Set<number>();
  const radius = Math.max(0, (brushSize - 1) / 2);
  if (path.length === 1) {
    stampBrush(buf, path[0].x, path[0].y, radius, touched);
  }
  for (let i = 1; i < path.length; i++) {
    const a = path[i - 1];
    const b = path[i];
    const steps = Math.max(1, Math.ceil(Math.hypot(b.x - a.x, b.y - a.y)));
    for (let s = 0; s <= steps; s++) {
      const t = s / steps;
      stampBrush(buf, a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t, radius, touched);
    }
  }
  const changed: number[] = [];
  for (const idx of touched) {
    const o = idx * 3;
    if (buf.data[o] !== color[0] || buf.data[o + 1] !== color[1] || buf.data[o + 2] !== color[2]) {
      changed.push(idx);
    }
  }
  changed.sort((a, b) => a - b);
  const previous = new Uint8Array(changed.length * 3);
  changed.forEach((idx, i) => {
    const o = idx * 3;
    previous[i * 3] = buf.data[o];
    previous[i * 3 + 1] = buf.data[o + 1];
    previous[i * 3 + 2] = buf.data[o + 2];
    buf.data[o] = color[0];
    buf.data[o + 1] = color[1];
    buf.data[o + 2] = color[2];
  });
  return { indices: changed, previous };
}

export function applyUndo(buf: PixelBuffer, patch: UndoPatch): void {
  patch.indices.forEach((idx, i) => {
    const o = idx * 3;
    buf.data[o] = patch.previous[i * 3];
    buf.data[o + 1] = patch.previous[i * 3 + 1];
    buf.data[o + 2] = patch.previous[i * 3 + 2];
  });
}

/** Pixel-inequality mask between two buffers, dilated by a square margin.
 * Mirrors the server's edit-mask derivation for client-side preview. */
export function diffMask(prev: PixelBuffer, edited: PixelBuffer, margin: number): Uint8Array {
  if (prev.width !== edited.width || prev.height !== edited.height) {
    throw new Error("buffer shapes differ");
  }
  const w = prev.width;
  const h = prev.height;
  const raw = new Uint8Array(w * h);
  for (let i = 0; i < w * h; i++) {
    const o = i * 3;
    if (
      prev.data[o] !== edited.data[o] ||
      prev.data[o + 1] !== edited.data[o + 1] ||
      prev.data[o + 2] !== edited.data[o + 2]
    ) {
      raw[i] = 1;
    }
  }
  if (margin <= 0) return raw;
  const out = new Uint8Array(w * h);
  for (let y = 0; y < h; y++) {
    for (let x = 0; x < w; x++) {
      if (!raw[y * w + x]) continue;
      const y0 = Math.max(0, y - margin);
      const y1 = Math.min(h - 1, y + margin);
      const x0 = Math.max(0, x - margin);
      const x1 = Math.min(w - 1, x + margin);
      for (let yy = y0; yy <= y1; yy++) {
        for (let xx = x0; xx <= x1; xx++) {
          out[yy * w + xx] = 1;
        }
      }
    }
  }
  return out;
}
