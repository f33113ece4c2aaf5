// Typed client for the service's REST control surface. Errors carry the
// service's own reason string so the UI can show it verbatim.

import type { StatusDoc } from "./messages";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(detail);
  }
}

export interface RecordSummary {
  id: string;
  filename: string;
  bytes: number;
}

export interface AnalysisTable {
  report: string;
  header: string[];
  rows: (string | number)[][];
  channel?: number;
}

export interface StreamStartRequest {
  backend?: string;
  scenario?: string;
  record?: string;
  sps?: number;
  gain?: number;
  seed?: number;
  pace?: string;
  duration_s?: number;
}

async function request<T>(path: string, init?: RequestInit): Promise<T> {
  const response = await fetch(path, init);
  const body = await response.json().catch(() => ({}));
  if (!response.ok) {
    const detail =
      typeof (body as { detail?: unknown }).detail === "string"
        ? (body as { detail: string }).detail
        : `${response.status} ${response.statusText}`;
    throw new ApiError(response.status, detail);
  }
  return body as T;
}

function post<T>(path: string, payload?: unknown): Promise<T> {
  return request<T>(path, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(payload ?? {}),
  });
}

export class ApiClient {
  constructor(readonly base: string = "") {}

  getStatus(): Promise<StatusDoc> {
    return request<StatusDoc>(`${this.base}/status`);
  }

  startStream(body: StreamStartRequest): Promise<StatusDoc> {
    return post<StatusDoc>(`${this.base}/stream/start`, body);
  }

  stopStream(): Promise<StatusDoc> {
    return post<StatusDoc>(`${this.base}/stream/stop`);
  }

  setFilters(band: "raw" | string | number[], notch?: boolean): Promise<StatusDoc> {
    return request<StatusDoc>(`${this.base}/filters`, {
      method: "PUT",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(notch === undefined ? { band } : { band, notch }),
    });
  }

  startSession(protocol: string, cycles: number): Promise<StatusDoc> {
    return post<StatusDoc>(`${this.base}/session/start`, { protocol, cycles });
  }

  stopSession(): Promise<StatusDoc> {
    return post<StatusDoc>(`${this.base}/session/stop`);
  }

  listRecords(): Promise<RecordSummary[]> {
    return request<RecordSummary[]>(`${this.base}/records`);
  }

  recordAnalysis(recordId: string, report: "alpha" | "artifact"): Promise<AnalysisTable> {
    return request<AnalysisTable>(
      `${this.base}/records/${encodeURIComponent(recordId)}/analysis?report=${report}`,
    );
  }
}
