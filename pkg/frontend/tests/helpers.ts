/** Fixture loading and a recording fake of the engine's HTTP surface. */

import { readFileSync } from "node:fs";
import { join } from "node:path";

import type { MessageResponse, Transcript } from "../src/types.js";

export function fixture<T>(name: string): T {
  const path = join(process.cwd(), "tests", "fixtures", `${name}.json`);
  return JSON.parse(readFileSync(path, "utf-8")) as T;
}

export const clarifyResponse = () => fixture<MessageResponse>("clarify_response");
export const answerResponse = () => fixture<MessageResponse>("answer_response");
export const transcriptFixture = () => fixture<Transcript>("transcript");
export const script = () => fixture<{ question: string; option_id: string }>("script");

export interface RecordedCall {
  url: string;
  method: string;
  body: unknown;
}

/** Routes requests to fixtures and records every call it serves. */
export class FakeApi {
  calls: RecordedCall[] = [];
  failing = false;

  constructor(private readonly sessionId = "fixture-session") {}

  fetch = async (url: string, init?: RequestInit): Promise<Response> => {
    const method = init?.method ?? "GET";
    const body = init?.body ? JSON.parse(String(init.body)) : undefined;
    this.calls.push({ url, method, body });

    if (this.failing) {
      throw new Error("connection refused");
    }
    if (url.endsWith("/v1/health")) {
      return json(fixture("health"));
    }
    if (url.endsWith("/v1/sessions") && method === "POST") {
      return json({ session_id: this.sessionId });
    }
    if (url.endsWith(`/v1/sessions/${this.sessionId}/messages`)) {
      const text = (body as { text: string }).text;
      if (text === script().question) {
        return json(clarifyResponse());
      }
      if (text === script().option_id) {
        return json(answerResponse());
      }
      return json({
        kind: "reject",
        message: "unscripted",
        warnings: [],
        truncated: false,
      } satisfies MessageResponse);
    }
    if (url.endsWith(`/v1/sessions/${this.sessionId}`)) {
      return json(transcriptFixture());
    }
    return json({ code: "unknown", message: url }, 404);
  };

  postedMessages(): RecordedCall[] {
    return this.calls.filter(
      (c) => c.method === "POST" && c.url.includes("/messages"),
    );
  }
}

function json(payload: unknown, status = 200): Response {
  return new Response(JSON.stringify(payload), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

/** Every string rendered inside engine bubbles must appear somewhere in the
 * source response JSON: the UI invents nothing. */
export function collectStrings(value: unknown, into: Set<string>): Set<string> {
  if (typeof value === "string") {
    into.add(value);
  } else if (typeof value === "number" || typeof value === "boolean") {
    into.add(String(value));
  } else if (Array.isArray(value)) {
    for (const item of value) {
      collectStrings(item, into);
    }
  } else if (value && typeof value === "object") {
    for (const item of Object.values(value)) {
      collectStrings(item, into);
    }
  }
  return into;
}
