import type { SessionEvent } from "./events.js";
import type { FetchLike } from "./stream.js";

export class ApiError extends Error {
  readonly status: number;
  readonly detail: unknown;

  constructor(method: string, path: string, status: number, detail: unknown) {
    super(`${method} ${path} -> HTTP ${status}`);
    this.name = "ApiError";
    this.status = status;
    this.detail = detail;
  }
}

export type SessionSummary = {
  session_id: string;
  phase: string;
};

export type SessionDetail = SessionSummary & {
  fix_iterations: number;
  event_count: number;
};

export type EventPage = {
  events: SessionEvent[];
  cursor: number;
};

export type StepResponse = {
  events: SessionEvent[];
  phase: string;
};

export type FixResponse = {
  iterations: number;
  resolved: boolean;
  events: SessionEvent[];
};

export class ApiClient {
  readonly baseUrl: string;
  private readonly fetchImpl: FetchLike;

  constructor(baseUrl: string, fetchImpl?: FetchLike) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
    this.fetchImpl = fetchImpl ?? ((url, init) => fetch(url, init));
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method };
    if (body !== undefined) {
      init.headers = { "content-type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, init);
    const text = await response.text();
    let parsed: unknown = null;
    if (text !== "") {
      try {
        parsed = JSON.parse(text);
      } catch {
        parsed = text;
      }
    }
    if (!response.ok) {
      throw new ApiError(method, path, response.status, parsed);
    }
    return parsed as T;
  }

  createSession(
    config?: Record<string, unknown>,
    sessionId?: string,
  ): Promise<SessionSummary> {
    const body: Record<string, unknown> = { config: config ?? {} };
    if (sessionId !== undefined) {
      body["session_id"] = sessionId;
    }
    return this.request("POST", "/sessions", body);
  }

  listSessions(): Promise<{ sessions: SessionSummary[] }> {
    return this.request("GET", "/sessions");
  }

  getSession(id: string): Promise<SessionDetail> {
    return this.request("GET", `/sessions/${id}`);
  }

  sendMessage(id: string, text: string): Promise<StepResponse> {
    return this.request("POST", `/sessions/${id}/messages`, { text });
  }

  finalize(id: string, specText?: string): Promise<StepResponse> {
    const body = specText === undefined ? {} : { spec_text: specText };
    return this.request("POST", `/sessions/${id}/finalize`, body);
  }

  generate(id: string): Promise<StepResponse> {
    return this.request("POST", `/sessions/${id}/generate`, {});
  }

  run(id: string): Promise<StepResponse> {
    return this.request("POST", `/sessions/${id}/run`, {});
  }

  probe(id: string): Promise<Record<string, unknown>> {
    return this.request("POST", `/sessions/${id}/probe`, {});
  }

  fix(id: string, issue: string): Promise<FixResponse> {
    return this.request("POST", `/sessions/${id}/fix`, { issue });
  }

  close(id: string): Promise<{ phase: string }> {
    return this.request("POST", `/sessions/${id}/close`, {});
  }

  events(id: string, after = 0): Promise<EventPage> {
    return this.request("GET", `/sessions/${id}/events?after=${after}`);
  }

  artifacts(id: string): Promise<Record<string, unknown>> {
    return this.request("GET", `/sessions/${id}/artifacts`);
  }
}
