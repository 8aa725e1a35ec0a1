/**
 * Thin fetch client for the engine HTTP API. One method per endpoint,
 * no retry logic here (the behavior batcher owns retries for event
 * ingestion; everything else surfaces errors to the caller).
 */

import type {
  Device,
  EmotionFrame,
  FeedbackRecord,
  PipelineOutcome,
  RawEventPayload,
  Thumb,
} from "./types.js";

export class ApiError extends Error {
  status: number;

  constructor(status: number, message: string) {
    super(message);
    this.status = status;
  }
}

export class EngineApi {
  baseUrl: string;

  constructor(baseUrl: string) {
    // no trailing slash so path concatenation stays predictable
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  private async request(method: string, path: string, body?: unknown): Promise<unknown> {
    const init: RequestInit = { method, headers: { "content-type": "application/json" } };
    if (body !== undefined) init.body = JSON.stringify(body);
    const res = await fetch(this.baseUrl + path, init);
    const text = await res.text();
    let parsed: unknown = null;
    if (text) {
      try {
        parsed = JSON.parse(text);
      } catch {
        parsed = text;
      }
    }
    if (!res.ok) {
      const detail =
        typeof parsed === "object" && parsed !== null && "error" in (parsed as object)
          ? String((parsed as { error: unknown }).error)
          : `HTTP ${res.status}`;
      throw new ApiError(res.status, detail);
    }
    return parsed;
  }

  async createSession(sessionId?: string): Promise<{ session_id: string; user_id: string | null }> {
    const body: Record<string, unknown> = {};
    if (sessionId) body.session_id = sessionId;
    return (await this.request("POST", "/sessions", body)) as {
      session_id: string;
      user_id: string | null;
    };
  }

  async setContext(sessionId: string, device: Device, at?: string): Promise<unknown> {
    const body: Record<string, unknown> = { device };
    if (at) body.at = at;
    return this.request("POST", `/sessions/${sessionId}/context`, body);
  }

  async postEvents(sessionId: string, events: RawEventPayload[]): Promise<unknown> {
    return this.request("POST", `/sessions/${sessionId}/events`, events);
  }

  async postEmotion(sessionId: string, frame: EmotionFrame): Promise<unknown> {
    return this.request("POST", `/sessions/${sessionId}/emotion`, frame);
  }

  async run(sessionId: string, reasoner: "rule" | "llm" = "rule"): Promise<PipelineOutcome> {
    return (await this.request(
      "POST",
      `/sessions/${sessionId}/run?reasoner=${reasoner}`,
    )) as PipelineOutcome;
  }

  async uiContext(sessionId: string): Promise<unknown> {
    return this.request("GET", `/sessions/${sessionId}/ui-context`);
  }

  async feedback(sessionId: string, nudgeId: string, thumbs: Thumb): Promise<FeedbackRecord> {
    return (await this.request("POST", `/sessions/${sessionId}/feedback`, {
      nudge_id: nudgeId,
      thumbs,
    })) as FeedbackRecord;
  }

  async explanation(sessionId: string): Promise<{ session_id: string; explanation: string }> {
    return (await this.request("GET", `/sessions/${sessionId}/explanation`)) as {
      session_id: string;
      explanation: string;
    };
  }
}
