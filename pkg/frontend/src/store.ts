/** Editor state: canvas, layer selection, undo, submit/poll, history.
 *
 * DOM-free; PNG encoding/decoding is injected (node tests use the bundled
 * codec with zlib, the browser uses canvas APIs), so the whole edit loop is
 * testable headlessly.
 */

import { EditServiceClient, JobInfo, SessionInfo } from "./api.js";
import { applyUndo, diffMask, paintStroke, PathPoint, PixelBuffer, UndoPatch } from "./canvas.js";
import { isPalettePure, PaletteEntry, quantizeToPalette, RGB } from "./palette.js";
import { pollJob, PollOptions } from "./pollJob.js";

export const EDIT_MASK_MARGIN = 4; // must match the server's dilation margin

export interface PngCodec {
  encodeRgb(buf: PixelBuffer): Promise<string>; // base64 PNG
  decodeRgb(b64: string): Promise<PixelBuffer>;
  decodeGray(b64: string): Promise<{ width: number; height: number; data: Uint8Array }>;
}

export interface Stage {
  index: number;
  seed: number;
  submittedBasemapB64: string;
  maskEmpty: boolean;
  artifacts: { basemap: string; mask: string; image: string };
  pngs?: { basemap: string; mask: string; image: string };
}

export class EditorStore {
  readonly session: SessionInfo;
  readonly palette: PaletteEntry[];
  canvas: PixelBuffer;
  committedBasemap: PixelBuffer;
  selectedLayer = 0;
  brushSize = 3;
  readonly history: Stage[] = [];
  pendingJobId: string | null = null;
  private undoStack: UndoPatch[] = [];

  constructor(
    private client: EditServiceClient,
    private codec: PngCodec,
    session: SessionInfo,
    palette: PaletteEntry[],
    referenceBasemap: PixelBuffer,
  ) {
    this.session = session;
    this.palette = palette;
    this.committedBasemap = referenceBasemap;
    this.canvas = this.committedBasemap.clone();
  }

  static async create(
    client: EditServiceClient,
    codec: PngCodec,
    city: string,
    seed = 0,
  ): Promise<EditorStore> {
    const meta = await client.meta();
    const session = await client.createSession(city, seed);
    const reference = await codec.decodeRgb(session.reference.basemap.png_b64);
    return new EditorStore(client, codec, session, meta.palette.layers, reference);
  }

  get selectedColor(): RGB {
    return this.palette[this.selectedLayer].rgb;
  }

  selectLayer(index: number): void {
    if (index < 0 || index >= this.palette.length) throw new Error(`no palette layer ${index}`);
    this.selectedLayer = index;
  }

  stroke(path: PathPoint[]): void {
    if (path.length === 0) return;
    const patch = paintStroke(this.canvas, this.selectedColor, path, this.brushSize);
    if (patch.indices.length > 0) this.undoStack.push(patch);
  }

  undo(): boolean {
    const patch = this.undoStack.pop();
    if (!patch) return false;
    applyUndo(this.canvas, patch);
    return true;
  }

  /** Client-side preview of the mask the server will derive for this edit. */
  maskPreview(): Uint8Array {
    return diffMask(this.committedBasemap, this.canvas, EDIT_MASK_MARGIN);
  }

  /** Quantize, submit the canvas, poll to completion, append the stage.
   * The canvas survives failures; the pending flag always clears. */
  async submitAndPoll(pollOpts: PollOptions = {}): Promise<Stage> {
    if (this.pendingJobId !== null) {
      throw new Error(`a job is already pending (${this.pendingJobId})`);
    }
    const toSend = this.canvas.clone();
    quantizeToPalette(toSend.data, this.palette);
    if (!isPalettePure(toSend.data, this.palette)) {
      throw new Error("quantization failed to produce a palette-pure basemap");
    }
    const payload = await this.codec.encodeRgb(toSend);
    const { job_id } = await this.client.submitEdit(this.session.session_id, payload);
    this.pendingJobId = job_id;
    let job: JobInfo;
    try {
      job = await pollJob(this.client, job_id, pollOpts);
    } finally {
      this.pendingJobId = null;
    }
    const result = job.result!;
    const stage: Stage = {
      index: result.stage_index,
      seed: result.seed,
      submittedBasemapB64: payload,
      maskEmpty: result.mask_empty,
      artifacts: result.artifacts,
      pngs: result.png_b64,
    };
    this.history.push(stage);
    this.committedBasemap = toSend;
    this.canvas = toSend.clone();
    this.undoStack = [];
    return stage;
  }
}

/** Re-submit a recorded basemap sequence against a fresh session.
 * With the same city/seed/checkpoint this reproduces the recorded artifact
 * digests exactly. */
export async function replaySequence(
  client: EditServiceClient,
  city: string,
  seed: number,
  basemapB64s: string[],
  pollOpts: PollOptions = {},
): Promise<Stage[]> {
  const session = await client.createSession(city, seed);
  const stages: Stage[] = [];
  for (const payload of basemapB64s) {
    const { job_id } = await client.submitEdit(session.session_id, payload);
    const job = await pollJob(client, job_id, pollOpts);
    const result = job.result!;
    stages.push({
      index: result.stage_index,
      seed: result.seed,
      submittedBasemapB64: payload,
      maskEmpty: result.mask_empty,
      artifacts: result.artifacts,
      pngs: result.png_b64,
    });
  }
  return stages;
}
