/** Thin typed client over the engine's HTTP endpoints. */

import type { MessageResponse, Transcript } from "./types.js";

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(`${this.baseUrl}${path}`, init);
    const body = await response.json().catch(() => ({}));
    if (!response.ok) {
      const detail =
        typeof body === "object" && body !== null && "message" in body
          ? String((body as { message: unknown }).message)
          : response.statusText;
      throw new ApiError(response.status, detail);
    }
    return body as T;
  }

  async health(): Promise<boolean> {
    try {
      const body = await this.request<{ status: string }>("/v1/health");
      return body.status === "ok";
    } catch {
      return false;
    }
  }

  async startSession(): Promise<string> {
    const body = await this.request<{ session_id: string }>("/v1/sessions", {
      method: "POST",
    });
    return body.session_id;
  }

  async sendMessage(sessionId: string, text: string, insight = false): Promise<MessageResponse> {
    return this.request<MessageResponse>(`/v1/sessions/${sessionId}/messages`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ text, insight }),
    });
  }

  async fetchTranscript(sessionId: string): Promise<Transcript> {
    return this.request<Transcript>(`/v1/sessions/${sessionId}`);
  }
}
