/**
 * Thread state and pure reducers.
 *
 * The transcript is server-authoritative: the only client state is the
 * session id, the ordered messages as received, and transient UI bits
 * (in-flight flag, banner). A pending clarification is derived from the
 * last engine reply, so at most one prompt is ever active.
 */

import type { ClarificationOption, MessageResponse, ThreadMessage, Transcript } from "./types.js";

export interface PendingClarification {
  options: ClarificationOption[];
  allowsFreeText: boolean;
}

export interface ThreadState {
  sessionId: string | null;
  messages: ThreadMessage[];
  pending: PendingClarification | null;
  awaitingReply: boolean;
  banner: string | null;
}

export function emptyThread(): ThreadState {
  return { sessionId: null, messages: [], pending: null, awaitingReply: false, banner: null };
}

function pendingFrom(response: MessageResponse): PendingClarification | null {
  if (response.kind !== "clarify") {
    return null;
  }
  return {
    options: response.options ?? [],
    allowsFreeText: response.allows_free_text ?? true,
  };
}

export function fromTranscript(transcript: Transcript): ThreadState {
  const state = emptyThread();
  state.sessionId = transcript.session_id;
  state.messages = [...transcript.messages];
  for (let i = transcript.messages.length - 1; i >= 0; i -= 1) {
    const message = transcript.messages[i];
    if (message.author === "engine") {
      state.pending = pendingFrom(message.response);
      break;
    }
  }
  return state;
}

export function applyUserText(state: ThreadState, text: string): ThreadState {
  return {
    ...state,
    messages: [...state.messages, { author: "user", text }],
    awaitingReply: true,
    banner: null,
  };
}

export function applyResponse(state: ThreadState, response: MessageResponse): ThreadState {
  return {
    ...state,
    messages: [...state.messages, { author: "engine", response }],
    pending: pendingFrom(response),
    awaitingReply: false,
  };
}

export function applyFailure(state: ThreadState, banner: string): ThreadState {
  return { ...state, awaitingReply: false, banner };
}
