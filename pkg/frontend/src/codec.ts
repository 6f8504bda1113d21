/** PNG codec adapters for the store's injected interface. */

import { PixelBuffer } from "./canvas.js";
import { decodePng, Deflate, encodePng, Inflate } from "./png.js";
import type { PngCodec } from "./store.js";

function b64encode(bytes: Uint8Array): string {
  if (typeof Buffer !== "undefined") return Buffer.from(bytes).toString("base64");
  let s = "";
  for (const b of bytes) s += String.fromCharCode(b);
  return btoa(s);
}

function b64decode(b64: string): Uint8Array {
  if (typeof Buffer !== "undefined") return new Uint8Array(Buffer.from(b64, "base64"));
  const s = atob(b64);
  const out = new Uint8Array(s.length);
  for (let i = 0; i < s.length; i++) out[i] = s.charCodeAt(i);
  return out;
}

/** Pure-TS codec over injected zlib primitives (node: zlib.deflateSync/inflateSync). */
export function makeZlibCodec(deflate: Deflate, inflate: Inflate): PngCodec {
  return {
    async encodeRgb(buf: PixelBuffer): Promise<string> {
      return b64encode(encodePng(buf.data, buf.width, buf.height, 3, deflate));
    },
    async decodeRgb(b64: string): Promise<PixelBuffer> {
      const img = decodePng(b64decode(b64), inflate);
      if (img.channels === 3) return new PixelBuffer(img.width, img.height, img.data);
      const rgb = new Uint8Array(img.width * img.height * 3);
      for (let i = 0; i < img.width * img.height; i++) {
        rgb[i * 3] = rgb[i * 3 + 1] = rgb[i * 3 + 2] = img.data[i];
      }
      return new PixelBuffer(img.width, img.height, rgb);
    },
    async decodeGray(b64: string) {
      const img = decodePng(b64decode(b64), inflate);
      if (img.channels === 1) return { width: img.width, height: img.height, data: img.data };
      const gray = new Uint8Array(img.width * img.height);
      for (let i = 0; i < gray.length; i++) gray[i] = img.data[i * 3];
      return { width: img.width, height: img.height, data: gray };
    },
  };
}

/** Browser codec over canvas APIs; no zlib needed. */
export function makeCanvasCodec(doc: Document): PngCodec {
  function bufToCanvas(buf: PixelBuffer): HTMLCanvasElement {
    const c = doc.createElement("canvas");
    c.width = buf.width;
    c.height = buf.height;
    const ctx = c.getContext("2d")!;
    const img = ctx.createImageData(buf.width, buf.height);
    for (let i = 0; i < buf.width * buf.height; i++) {
      img.data[i * 4] = buf.data[i * 3];
      img.data[i * 4 + 1] = buf.data[i * 3 + 1];
      img.data[i * 4 + 2] = buf.data[i * 3 + 2];
      img.data[i * 4 + 3] = 255;
    }
    ctx.putImageData(img, 0, 0);
    return c;
  }

  async function b64ToImageData(b64: string): Promise<ImageData> {
    const img = new Image();
    img.src = `data:image/png;base64,${b64}`;
    await img.decode();
    const c = doc.createElement("canvas");
    c.width = img.naturalWidth;
    c.height = img.naturalHeight;
    const ctx = c.getContext("2d")!;
    ctx.drawImage(img, 0, 0);
    return ctx.getImageData(0, 0, c.width, c.height);
  }

  return {
    async encodeRgb(buf: PixelBuffer): Promise<string> {
      return bufToCanvas(buf).toDataURL("image/png").split(",", 2)[1];
    },
    async decodeRgb(b64: string): Promise<PixelBuffer> {
      const img = await b64ToImageData(b64);
      const rgb = new Uint8Array(img.width * img.height * 3);
      for (let i = 0; i < img.width * img.height; i++) {
        rgb[i * 3] = img.data[i * 4];
        rgb[i * 3 + 1] = img.data[i * 4 + 1];
        rgb[i * 3 + 2] = img.data[i * 4 + 2];
      }
      return new PixelBuffer(img.width, img.height, rgb);
    },
    async decodeGray(b64: string) {
      const img = await b64ToImageData(b64);
      const gray = new Uint8Array(img.width * img.height);
      for (let i = 0; i < gray.length; i++) gray[i] = img.data[i * 4];
      return { width: img.width, height: img.height, data: gray };
    },
  };
}
