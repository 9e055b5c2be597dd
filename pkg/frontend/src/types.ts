/**
 * Wire types for the engine's HTTP JSON contract. The client renders these
 * fields and nothing else: every string on screen originates here.
 */

export type ReplyKind = "answer" | "clarify" | "ask_missing" | "reject";

export interface ClarificationOption {
  option_id: string;
  label: string;
  description: string;
}

export interface InsightFinding {
  title: string;
  evidence: string;
}

export interface AttributionContribution {
  value: string;
  delta: number;
  contribution_share: number;
}

export interface InsightReport {
  narrative: string;
  findings: InsightFinding[];
  attachments: Array<Record<string, unknown>>;
  flags?: string[];
}

export interface MessageResponse {
  kind: ReplyKind;
  message: string;
  warnings: string[];
  truncated: boolean;
  sql?: string;
  columns?: string[];
  rows?: unknown[][];
  sir?: Record<string, unknown>;
  insight?: InsightReport;
  options?: ClarificationOption[];
  allows_free_text?: boolean;
  code?: string;
}

export type ThreadMessage =
  | { author: "user"; text: string }
  | { author: "engine"; response: MessageResponse };

export interface Transcript {
  session_id: string;
  messages: ThreadMessage[];
}
