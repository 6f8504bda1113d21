/** Typed client for the edit service's /v1 endpoints. */

export interface ImagePayload {
  digest: string;
  png_b64: string;
}

export interface SessionInfo {
  session_id: string;
  city: string;
  stage_count: number;
  resolution: number;
  reference: { satellite: ImagePayload; basemap: ImagePayload };
}

export interface JobResult {
  stage_index: number;
  seed: number;
  mask_empty: boolean;
  artifacts: { basemap: string; mask: string; image: string };
  png_b64?: { basemap: string; mask: string; image: string };
}

export interface JobInfo {
  job_id: string;
  kind: string;
  session_id: string | null;
  status: "queued" | "running" | "done" | "failed";
  result: JobResult | null;
  error: { category: string; message: string } | null;
}

export interface Meta {
  cities: string[];
  palette: { version: string; layers: { name: string; rgb: [number, number, number] }[] };
  checkpoint_hash: string;
  resolution: number;
  timesteps: number;
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export class EditServiceClient {
  constructor(
    private baseUrl: string,
    private fetchImpl: FetchLike = (...args) => fetch(...args),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchImpl(`${this.baseUrl}${path}`, {
      headers: { "content-type": "application/json" },
      ...init,
    });
    if (!resp.ok) {
      let detail = resp.statusText;
      try {
        detail = JSON.stringify((await resp.json()).detail);
      } catch {
        /* keep statusText */
      }
      throw new ApiError(resp.status, `${path}: ${detail}`);
    }
    return (await resp.json()) as T;
  }

  meta(): Promise<Meta> {
    return this.request<Meta>("/v1/meta");
  }

  createSession(city: string, seed = 0, referenceTileId?: string): Promise<SessionInfo> {
    return this.request<SessionInfo>("/v1/sessions", {
      method: "POST",
      body: JSON.stringify({ city, seed, reference_tile_id: referenceTileId ?? null }),
    });
  }

  submitEdit(sessionId: string, basemapPngB64: string): Promise<{ job_id: string }> {
    return this.request<{ job_id: string }>(`/v1/sessions/${sessionId}/edits`, {
      method: "POST",
      body: JSON.stringify({ basemap_png_b64: basemapPngB64 }),
    });
  }

  getJob(jobId: string): Promise<JobInfo> {
    return this.request<JobInfo>(`/v1/jobs/${jobId}`);
  }

  artifactUrl(digest: string): string {
    return `${this.baseUrl}/v1/artifacts/${digest}`;
  }
}
