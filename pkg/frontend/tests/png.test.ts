import { deflateSync, inflateSync } from "node:zlib";

import { describe, expect, it } from "vitest";

import { decodePng, encodePng } from "../src/png.js";

const deflate = (d: Uint8Array) => new Uint8Array(deflateSync(d));
const inflate = (d: Uint8Array) => new Uint8Array(inflateSync(d));

function randomBytes(n: number, seed = 1): Uint8Array {
  const out = new Uint8Array(n);
  let s = seed >>> 0;
  for (let i = 0; i < n; i++) {
    s = (s * 1664525 + 1013904223) >>> 0;
    out[i] = s & 0xff;
  }
  return out;
}

describe("png codec", () => {
  it("rgb roundtrip is lossless", () => {
    const data = randomBytes(12 * 9 * 3);
    const png = encodePng(data, 12, 9, 3, deflate);
    const back = decodePng(png, inflate);
    expect(back.width).toBe(12);
    expect(back.height).toBe(9);
    expect(back.channels).toBe(3);
    expect(back.data).toEqual(data);
  });

  it("grayscale roundtrip is lossless", () => {
    const data = randomBytes(16 * 16, 7);
    const back = decodePng(encodePng(data, 16, 16, 1, deflate), inflate);
    expect(back.channels).toBe(1);
    expect(back.data).toEqual(data);
  });

  it("rejects non-png payloads", () => {
    expect(() => decodePng(randomBytes(64), inflate)).toThrow(/not a PNG/);
  });

  it("decodes externally produced filtered scanlines", () => {
    // synthesize a file with per-row filters 1..4 by filtering manually
    const width = 8;
    const height = 5;
    const channels = 3;
    const stride = width * channels;
    const pixels = randomBytes(stride * height, 3);
    const filtered = new Uint8Array((stride + 1) * height);
    const prevRow = new Uint8Array(stride);
    const filters = [0, 1, 2, 3, 4];
    for (let y = 0; y < height; y++) {
      const f = filters[y];
      filtered[y * (stride + 1)] = f;
      const row = pixels.subarray(y * stride, (y + 1) * stride);
      for (let x = 0; x < stride; x++) {
        const a = x >= channels ? row[x - channels] : 0;
        const b = y > 0 ? prevRow[x] : 0;
        const c = y > 0 && x >= channels ? prevRow[x - channels] : 0;
        let v = row[x];
        if (f === 1) v = (v - a) & 0xff;
        else if (f === 2) v = (v - b) & 0xff;
        else if (f === 3) v = (v - Math.floor((a + b) / 2)) & 0xff;
        else if (f === 4) {
          const p = a + b - c;
          const pa = Math.abs(p - a);
          const pb = Math.abs(p - b);
          const pc = Math.abs(p - c);
          const pred = pa <= pb && pa <= pc ? a : pb <= pc ? b : c;
          v = (v - pred) & 0xff;
        }
        filtered[y * (stride + 1) + 1 + x] = v;
      }
      prevRow.set(row);
    }
    // splice the filtered payload into a realistic container
    const template = encodePng(pixels, width, height, 3, deflate);
    const rebuilt = rebuildWithIdat(template, new Uint8Array(deflateSync(filtered)));
    const back = decodePng(rebuilt, inflate);
    expect(back.data).toEqual(pixels);
  });
});

function crcTable(): Uint32Array {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    table[n] = c >>> 0;
  }
  return table;
}

function rebuildWithIdat(template: Uint8Array, idat: Uint8Array): Uint8Array {
  const table = crcTable();
  const crc32 = (bytes: Uint8Array) => {
    let c = 0xffffffff;
    for (const b of bytes) c = table[(c ^ b) & 0xff] ^ (c >>> 8);
    return (c ^ 0xffffffff) >>> 0;
  };
  // copy signature + IHDR (8 + 25 bytes), then write new IDAT + IEND
  const head = template.subarray(0, 8 + 25);
  const out = new Uint8Array(head.length + 12 + idat.length + 12);
  out.set(head, 0);
  const view = new DataView(out.buffer);
  let off = head.length;
  view.setUint32(off, idat.length);
  out.set([0x49, 0x44, 0x41, 0x54], off + 4);
  out.set(idat, off + 8);
  view.setUint32(off + 8 + idat.length, crc32(out.subarray(off + 4, off + 8 + idat.length)));
  off += 12 + idat.length;
  view.setUint32(off, 0);
  out.set([0x49, 0x45, 0x4e, 0x44], off + 4);
  view.setUint32(off + 8, crc32(out.subarray(off + 4, off + 8)));
  return out;
}
