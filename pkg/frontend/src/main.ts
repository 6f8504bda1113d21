/** Browser wiring: palette buttons, paint canvas, submit/poll, history strip.
 *
 * Side-by-side panes: basemap editor on the left, the latest inpainted
 * satellite on the right with a mask-overlay toggle, history thumbnails
 * below. One pending job at a time; the Submit button reflects it.
 */

import { EditServiceClient } from "./api.js";
import { PathPoint, PixelBuffer } from "./canvas.js";
import { makeCanvasCodec } from "./codec.js";
import { EditorStore, Stage } from "./store.js";

const SCALE = 6; // device pixels per basemap pixel

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function drawBuffer(canvas: HTMLCanvasElement, buf: PixelBuffer): void {
  canvas.width = buf.width * SCALE;
  canvas.height = buf.height * SCALE;
  const ctx = canvas.getContext("2d")!;
  ctx.imageSmoothingEnabled = false;
  const off = document.createElement("canvas");
  off.width = buf.width;
  off.height = buf.height;
  const octx = off.getContext("2d")!;
  const img = octx.createImageData(buf.width, buf.height);
  for (let i = 0; i < buf.width * buf.height; i++) {
    img.data[i * 4] = buf.data[i * 3];
    img.data[i * 4 + 1] = buf.data[i * 3 + 1];
    img.data[i * 4 + 2] = buf.data[i * 3 + 2];
    img.data[i * 4 + 3] = 255;
  }
  octx.putImageData(img, 0, 0);
  ctx.drawImage(off, 0, 0, canvas.width, canvas.height);
}

async function drawArtifact(canvas: HTMLCanvasElement, url: string, maskUrl: string | null): Promise<void> {
  const img = new Image();
  img.crossOrigin = "anonymous";
  img.src = url;
  await img.decode();
  canvas.width = img.naturalWidth * SCALE;
  canvas.height = img.naturalHeight * SCALE;
  const ctx = canvas.getContext("2d")!;
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(img, 0, 0, canvas.width, canvas.height);
  if (maskUrl) {
    const mask = new Image();
    mask.crossOrigin = "anonymous";
    mask.src = maskUrl;
    await mask.decode();
    ctx.globalAlpha = 0.45;
    ctx.globalCompositeOperation = "screen";
    ctx.drawImage(mask, 0, 0, canvas.width, canvas.height);
    ctx.globalAlpha = 1;
    ctx.globalCompositeOperation = "source-over";
  }
}

async function boot(): Promise<void> {
  const params = new URLSearchParams(location.search);
  const baseUrl = params.get("service") ?? "http://127.0.0.1:8000";
  const seed = Number(params.get("seed") ?? "0");
  const client = new EditServiceClient(baseUrl);
  const codec = makeCanvasCodec(document);
  const status = el<HTMLDivElement>("status");

  let meta;
  try {
    meta = await client.meta();
  } catch (err) {
    status.textContent = `cannot reach service at ${baseUrl}: ${err}`;
    return;
  }
  const city = params.get("city") ?? meta.cities[0];
  const store = await EditorStore.create(client, codec, city, seed);
  status.textContent = `session ${store.session.session_id.slice(0, 8)} · city ${city} · ${meta.resolution}px · checkpoint ${meta.checkpoint_hash.slice(0, 8)}`;

  const editCanvas = el<HTMLCanvasElement>("edit-canvas");
  const resultCanvas = el<HTMLCanvasElement>("result-canvas");
  const historyStrip = el<HTMLDivElement>("history");
  const paletteBar = el<HTMLDivElement>("palette");
  const brushInput = el<HTMLInputElement>("brush");
  const submitBtn = el<HTMLButtonElement>("submit");
  const undoBtn = el<HTMLButtonElement>("undo");
  const overlayToggle = el<HTMLInputElement>("mask-overlay");

  store.palette.forEach((entry, i) => {
    const b = document.createElement("button");
    b.textContent = entry.name;
    b.style.background = `rgb(${entry.rgb.join(",")})`;
    b.className = "layer";
    b.onclick = () => {
      store.selectLayer(i);
      Array.from(paletteBar.children).forEach((c, j) => c.classList.toggle("active", j === i));
    };
    paletteBar.appendChild(b);
  });
  (paletteBar.children[0] as HTMLButtonElement).classList.add("active");

  const redrawEditor = () => drawBuffer(editCanvas, store.canvas);
  redrawEditor();
  drawBuffer(resultCanvas, await codec.decodeRgb(store.session.reference.satellite.png_b64));

  let painting = false;
  let path: PathPoint[] = [];
  const toPixel = (ev: MouseEvent): PathPoint => {
    const rect = editCanvas.getBoundingClientRect();
    return {
      x: ((ev.clientX - rect.left) / rect.width) * store.canvas.width,
      y: ((ev.clientY - rect.top) / rect.height) * store.canvas.height,
    };
  };
  editCanvas.onmousedown = (ev) => {
    painting = true;
    path = [toPixel(ev)];
  };
  editCanvas.onmousemove = (ev) => {
    if (!painting) return;
    path.push(toPixel(ev));
    if (path.length >= 2) {
      store.stroke(path.slice(-2));
      redrawEditor();
    }
  };
  const finish = () => {
    if (!painting) return;
    painting = false;
    if (path.length === 1) {
      store.stroke(path);
      redrawEditor();
    }
    path = [];
  };
  editCanvas.onmouseup = finish;
  editCanvas.onmouseleave = finish;

  brushInput.oninput = () => {
    store.brushSize = Number(brushInput.value);
  };
  undoBtn.onclick = () => {
    if (store.undo()) redrawEditor();
  };

  let latestStage: Stage | null = null;
  const refreshResult = async () => {
    if (!latestStage) return;
    const maskUrl = overlayToggle.checked && !latestStage.maskEmpty
      ? client.artifactUrl(latestStage.artifacts.mask)
      : null;
    await drawArtifact(resultCanvas, client.artifactUrl(latestStage.artifacts.image), maskUrl);
  };
  overlayToggle.onchange = refreshResult;

  submitBtn.onclick = async () => {
    if (store.pendingJobId) return;
    submitBtn.disabled = true;
    status.textContent = "generating…";
    try {
      const stage = await store.submitAndPoll({ intervalMs: 1000 });
      latestStage = stage;
      const thumb = document.createElement("img");
      thumb.src = client.artifactUrl(stage.artifacts.image);
      thumb.title = `stage ${stage.index} (seed ${stage.seed})`;
      thumb.onclick = () => {
        latestStage = stage;
        void refreshResult();
      };
      historyStrip.appendChild(thumb);
      await refreshResult();
      redrawEditor();
      status.textContent = `stage ${stage.index} done${stage.maskEmpty ? " (identity edit, empty mask)" : ""}`;
    } catch (err) {
      status.textContent = `edit failed: ${err}`;
    } finally {
      submitBtn.disabled = false;
    }
  };
}

void boot();
