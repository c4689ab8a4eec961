/** Typed client for the generation service's HTTP API. */

export type ClassName = "logo" | "text" | "underlay" | "embellishment";

/** Normalized center-format box: [cx, cy, w, h], all in [0, 1]. */
export type Box = [number, number, number, number];

export interface PinnedElement {
  slot: number;
  cls: ClassName;
  box: Box;
}

export interface GenerateRequest {
  sample_id?: string;
  slogans: string[];
  pinned: PinnedElement[];
  steps: number;
  seed: number;
  trajectory?: boolean;
}

export interface LayoutElement {
  cls: ClassName;
  box: Box;
  score: number;
}

export interface Layout {
  canvas: [number, number];
  elements: LayoutElement[];
}

export interface TrajectoryStep {
  step: number;
  boxes: Box[];
  scores: number[];
}

export interface GenerateResponse {
  layout: Layout;
  constraints: GenerateRequest;
  trajectory?: TrajectoryStep[];
}

export interface SampleInfo {
  id: string;
  canvas: [number, number];
  slogans: string[];
}

export interface HealthInfo {
  status: string;
  model_loaded: boolean;
  config_digest: string | null;
  ablation: string | null;
  n_samples: number;
  max_slogans: number | null;
  n_slots: number | null;
  schedule_steps: number | null;
}

export interface FieldError {
  field: string;
  message: string;
}

/** A non-2xx response, carrying whatever detail the service returned. */
export class ApiError extends Error {
  status: number;
  fieldErrors: FieldError[];

  constructor(status: number, detail: unknown) {
    super(ApiError.describe(status, detail));
    this.status = status;
    this.fieldErrors = Array.isArray(detail) ? (detail as FieldError[]) : [];
  }

  static describe(status: number, detail: unknown): string {
    if (typeof detail === "string") return detail;
    if (Array.isArray(detail)) {
      return (detail as FieldError[])
        .map((d) => `${d.field}: ${d.message}`)
        .join("; ");
    }
    return `request failed with status ${status}`;
  }
}

async function parseOrThrow<T>(resp: Response): Promise<T> {
  if (resp.ok) {
    return (await resp.json()) as T;
  }
  let detail: unknown = `status ${resp.status}`;
  try {
    detail = ((await resp.json()) as { detail?: unknown }).detail ?? detail;
  } catch {
    // non-JSON error body; keep the status text
  }
  throw new ApiError(resp.status, detail);
}

export class ApiClient {
  constructor(private base: string = "") {}

  async health(): Promise<HealthInfo> {
    return parseOrThrow(await fetch(`${this.base}/api/health`));
  }

  async samples(): Promise<SampleInfo[]> {
    const body = await parseOrThrow<{ samples: SampleInfo[] }>(
      await fetch(`${this.base}/api/samples`),
    );
    return body.samples;
  }

  sampleImageUrl(id: string): string {
    return `${this.base}/api/samples/${encodeURIComponent(id)}/image`;
  }

  async generate(req: GenerateRequest): Promise<GenerateResponse> {
    const resp = await fetch(`${this.base}/api/generate`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(req),
    });
    return parseOrThrow(resp);
  }
}
