// Thin typed client over the /v1 endpoints; no state beyond credentials.

import type {
  AuditRow,
  MeasurementRecord,
  RequestDoc,
  SessionInfo,
  SubmitBody,
  TopologyDoc,
} from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, public code: string, message: string) {
    super(message);
  }
}

async function parseError(resp: Response): Promise<ApiError> {
  let code = "error";
  let message = resp.statusText;
  try {
    const body = await resp.json();
    const detail = body.detail ?? body;
    code = detail.code ?? code;
    message = detail.message ?? message;
  } catch {
    // non-JSON error body; keep the status text
  }
  return new ApiError(resp.status, code, message);
}

export class ApiClient {
  constructor(public baseUrl: string, public token: string) {}

  private headers(): Record<string, string> {
    return {
      Authorization: `Bearer ${this.token}`,
      "Content-Type": "application/json",
    };
  }

  private async get<T>(path: string): Promise<T> {
    const resp = await fetch(`${this.baseUrl}${path}`, { headers: this.headers() });
    if (!resp.ok) throw await parseError(resp);
    return (await resp.json()) as T;
  }

  async auth(): Promise<SessionInfo> {
    const resp = await fetch(`${this.baseUrl}/v1/auth`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ token: this.token }),
    });
    if (!resp.ok) throw await parseError(resp);
    return (await resp.json()) as SessionInfo;
  }

  topology(): Promise<TopologyDoc> {
    return this.get<TopologyDoc>("/v1/topology");
  }

  async requests(): Promise<RequestDoc[]> {
    const body = await this.get<{ requests: RequestDoc[] }>("/v1/requests");
    return body.requests;
  }

  request(id: string): Promise<RequestDoc> {
    return this.get<RequestDoc>(`/v1/requests/${encodeURIComponent(id)}`);
  }

  measurements(id: string): Promise<MeasurementRecord> {
    return this.get<MeasurementRecord>(
      `/v1/requests/${encodeURIComponent(id)}/measurements`);
  }

  async audit(): Promise<AuditRow[]> {
    const body = await this.get<{ audit: AuditRow[] }>("/v1/audit");
    return body.audit;
  }

  async submit(body: SubmitBody): Promise<string> {
    const resp = await fetch(`${this.baseUrl}/v1/requests`, {
      method: "POST",
      headers: this.headers(),
      body: JSON.stringify(body),
    });
    if (!resp.ok) throw await parseError(resp);
    const out = (await resp.json()) as { request_id: string };
    return out.request_id;
  }
}
