/**
 * Controller: one in-flight request per session, mirroring the server's
 * per-session serialization. An option click posts its option_id as an
 * ordinary message exactly once; further clicks are ignored until the
 * reply lands.
 */

import { ApiClient } from "./api.js";
import { render } from "./render.js";
import {
  applyFailure,
  applyResponse,
  applyUserText,
  emptyThread,
  fromTranscript,
  type ThreadState,
} from "./thread.js";

const UNREACHABLE_BANNER = "The analysis service is unreachable. Retry in a moment.";

export class App {
  state: ThreadState = emptyThread();
  private operation: Promise<void> = Promise.resolve();

  constructor(
    private readonly api: ApiClient,
    private readonly root: HTMLElement,
  ) {}

  /** Await all work queued so far (tests use this after clicks). */
  settle(): Promise<void> {
    return this.operation;
  }

  private enqueue(work: () => Promise<void>): Promise<void> {
    this.operation = this.operation.then(work);
    return this.operation;
  }

  async start(sessionId?: string): Promise<void> {
    await this.enqueue(async () => {
      try {
        if (sessionId) {
          const transcript = await this.api.fetchTranscript(sessionId);
          this.state = fromTranscript(transcript);
        } else {
          const created = await this.api.startSession();
          this.state = { ...emptyThread(), sessionId: created };
        }
      } catch {
        this.state = { ...emptyThread(), banner: UNREACHABLE_BANNER };
      }
      this.render();
    });
  }

  send(text: string): Promise<void> {
    if (this.state.awaitingReply || !this.state.sessionId) {
      return this.operation;
    }
    return this.dispatch(text);
  }

  pick(optionId: string): Promise<void> {
    if (this.state.awaitingReply || !this.state.sessionId) {
      return this.operation;
    }
    return this.dispatch(optionId);
  }

  private dispatch(text: string): Promise<void> {
    const sessionId = this.state.sessionId as string;
    this.state = applyUserText(this.state, text);
    this.render();
    return this.enqueue(async () => {
      try {
        const response = await this.api.sendMessage(sessionId, text);
        this.state = applyResponse(this.state, response);
      } catch (error) {
        const detail = error instanceof Error ? error.message : String(error);
        this.state = applyFailure(this.state, `Request failed: ${detail}`);
      }
      this.render();
    });
  }

  render(): void {
    render(this.state, this.root, {
      onSend: (text) => void this.send(text),
      onPick: (optionId) => void this.pick(optionId),
    });
  }
}
