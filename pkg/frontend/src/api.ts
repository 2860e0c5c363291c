/**
 * Typed client for the erase service. The UI never rasterizes polygons
 * itself; it ships vertex lists and renders whatever the service returns.
 */

export interface EraseRequestBody {
  image: string;
  polygons: number[][][];
  composite: boolean;
  return_strokes: boolean;
}

export interface EraseResponseBody {
  erased: string;
  stroke_mask?: string;
  stroke_mask2?: string;
  timings_ms: Record<string, number>;
}

export interface HealthBody {
  status: string;
  ckpt_version: number;
  model_config_hash: string;
}

/** Non-2xx status from the service, with its `detail` message when present. */
export class ServiceError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`service returned ${status}: ${detail}`);
    this.name = "ServiceError";
  }
}

/** 2xx response whose body is not the expected JSON document. */
export class MalformedResponseError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "MalformedResponseError";
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

async function errorDetail(resp: Response): Promise<string> {
  try {
    const body = await resp.json();
    if (body && typeof body.detail === "string") return body.detail;
    if (body && body.detail !== undefined) return JSON.stringify(body.detail);
  } catch {
    // fall through to the status line
  }
  return resp.statusText || "request failed";
}

export async function postErase(
  baseUrl: string,
  body: EraseRequestBody,
  fetchImpl: FetchLike = fetch,
): Promise<EraseResponseBody> {
  const resp = await fetchImpl(`${baseUrl}/api/erase`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(body),
  });
  if (!resp.ok) {
    throw new ServiceError(resp.status, await errorDetail(resp));
  }
  let parsed: unknown;
  try {
    parsed = await resp.json();
  } catch {
    throw new MalformedResponseError("response body is not JSON");
  }
  const doc = parsed as Partial<EraseResponseBody> | null;
  if (!doc || typeof doc.erased !== "string") {
    throw new MalformedResponseError("response is missing the erased image");
  }
  return doc as EraseResponseBody;
}

export async function getHealth(
  baseUrl: string,
  fetchImpl: FetchLike = fetch,
): Promise<HealthBody> {
  const resp = await fetchImpl(`${baseUrl}/api/health`);
  if (!resp.ok) {
    throw new ServiceError(resp.status, await errorDetail(resp));
  }
  return (await resp.json()) as HealthBody;
}

/** Human-readable banner text for a failed submit. */
export function bannerMessage(err: unknown): string {
  if (err instanceof ServiceError) {
    if (err.status === 503) return "model loading - try again shortly";
    return `erase failed (${err.status}): ${err.detail}`;
  }
  if (err instanceof MalformedResponseError) {
    return `unexpected service response: ${err.message}`;
  }
  return `service unreachable: ${err instanceof Error ? err.message : String(err)}`;
}
