/**
 * DOM rendering. Every text node comes from a MessageResponse field or the
 * user's own message; the renderer fabricates no content of its own.
 */

import type { ThreadState } from "./thread.js";
import type {
  AttributionContribution,
  ClarificationOption,
  InsightReport,
  MessageResponse,
  ThreadMessage,
} from "./types.js";

export interface Handlers {
  onSend(text: string): void;
  onPick(optionId: string): void;
}

function el<K extends keyof HTMLElementTagNameMap>(
  doc: Document,
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = doc.createElement(tag);
  if (className) {
    node.className = className;
  }
  if (text !== undefined) {
    node.textContent = text;
  }
  return node;
}

function renderResultTable(doc: Document, columns: string[], rows: unknown[][]): HTMLTableElement {
  const table = el(doc, "table", "result-table");
  const head = doc.createElement("thead");
  const headRow = doc.createElement("tr");
  for (const column of columns) {
    headRow.appendChild(el(doc, "th", undefined, column));
  }
  head.appendChild(headRow);
  table.appendChild(head);
  const body = doc.createElement("tbody");
  for (const row of rows) {
    const tr = doc.createElement("tr");
    for (const cell of row) {
      tr.appendChild(el(doc, "td", undefined, cell === null ? "NULL" : String(cell)));
    }
    body.appendChild(tr);
  }
  table.appendChild(body);
  return table;
}

function renderSql(doc: Document, sql: string): HTMLElement {
  const wrap = el(doc, "div", "sql-block");
  const pre = el(doc, "pre", "sql", sql);
  const copy = el(doc, "button", "copy-sql", "Copy SQL");
  copy.addEventListener("click", () => {
    const clipboard = doc.defaultView?.navigator?.clipboard;
    if (clipboard) {
      void clipboard.writeText(sql);
    }
  });
  wrap.appendChild(pre);
  wrap.appendChild(copy);
  return wrap;
}

function renderInsight(doc: Document, insight: InsightReport): HTMLElement {
  const panel = el(doc, "div", "insight-panel");
  panel.appendChild(el(doc, "p", "narrative", insight.narrative));
  for (const finding of insight.findings) {
    panel.appendChild(el(doc, "p", "finding", `${finding.title} [${finding.evidence}]`));
  }
  for (const attachment of insight.attachments) {
    if (attachment["tool"] !== "attribution") {
      continue;
    }
    const list = el(doc, "ul", "attribution");
    const contributions = (attachment["contributions"] ?? []) as AttributionContribution[];
    for (const c of contributions) {
      list.appendChild(
        el(doc, "li", undefined,
          `${c.value}: delta ${c.delta}, share ${c.contribution_share}`),
      );
    }
    panel.appendChild(list);
  }
  return panel;
}

function renderOptions(
  doc: Document,
  options: ClarificationOption[],
  active: boolean,
  handlers: Handlers,
): HTMLElement {
  const wrap = el(doc, "div", active ? "options active" : "options settled");
  for (const option of options) {
    if (active) {
      const button = el(doc, "button", "option", `${option.label} — ${option.description}`);
      button.dataset.optionId = option.option_id;
      button.addEventListener("click", () => handlers.onPick(option.option_id));
      wrap.appendChild(button);
    } else {
      wrap.appendChild(el(doc, "span", "option-label", option.label));
    }
  }
  return wrap;
}

function renderEngineMessage(
  doc: Document,
  response: MessageResponse,
  active: boolean,
  handlers: Handlers,
): HTMLElement {
  const bubble = el(doc, "div", `bubble engine ${response.kind}`);
  bubble.appendChild(el(doc, "p", "text", response.message));
  if (response.kind === "clarify" && response.options) {
    bubble.appendChild(renderOptions(doc, response.options, active, handlers));
  }
  if (response.sql) {
    bubble.appendChild(renderSql(doc, response.sql));
  }
  if (response.columns && response.rows) {
    bubble.appendChild(renderResultTable(doc, response.columns, response.rows));
    if (response.truncated) {
      bubble.appendChild(el(doc, "p", "truncated", "(result truncated)"));
    }
  }
  if (response.insight) {
    bubble.appendChild(renderInsight(doc, response.insight));
  }
  return bubble;
}

function renderMessage(
  doc: Document,
  message: ThreadMessage,
  active: boolean,
  handlers: Handlers,
): HTMLElement {
  if (message.author === "user") {
    const bubble = el(doc, "div", "bubble user");
    bubble.appendChild(el(doc, "p", "text", message.text));
    return bubble;
  }
  return renderEngineMessage(doc, message.response, active, handlers);
}

export function render(state: ThreadState, root: HTMLElement, handlers: Handlers): void {
  const doc = root.ownerDocument;
  root.textContent = "";

  if (state.banner) {
    root.appendChild(el(doc, "div", "banner", state.banner));
  }
  if (state.sessionId) {
    root.appendChild(el(doc, "div", "session-id", `session ${state.sessionId}`));
  }

  const thread = el(doc, "div", "thread");
  const lastIndex = state.messages.length - 1;
  state.messages.forEach((message, index) => {
    const active = index === lastIndex && state.pending !== null && !state.awaitingReply;
    thread.appendChild(renderMessage(doc, message, active, handlers));
  });
  root.appendChild(thread);

  const composer = el(doc, "div", "composer");
  const input = el(doc, "input") as HTMLInputElement;
  input.type = "text";
  input.placeholder = "Ask about your data";
  const send = el(doc, "button", "send", "Send");
  const freeSendBlocked = state.pending !== null && !state.pending.allowsFreeText;
  input.disabled = state.awaitingReply || freeSendBlocked;
  send.disabled = state.awaitingReply || freeSendBlocked;
  send.addEventListener("click", () => {
    if (input.value.trim()) {
      handlers.onSend(input.value.trim());
    }
  });
  composer.appendChild(input);
  composer.appendChild(send);
  root.appendChild(composer);
}
