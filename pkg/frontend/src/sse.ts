// Server-sent-events consumer over fetch streams, so the same code runs in
// the browser and under Node.  Reconnects resume strictly after the last
// applied sequence number, which keeps the event fold gapless and free of
// duplicates.

import type { ApiEvent } from "./types.js";

export interface StreamOptions {
  baseUrl: string;
  token: string;
  cursor?: number;
  requestId?: string;
  follow?: boolean;
  retryDelayMs?: number;
  onEvent: (event: ApiEvent) => void;
  onStale?: (stale: boolean) => void;
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

export class EventStream {
  cursor: number;
  private stopped = false;
  private controller: AbortController | null = null;

  constructor(private options: StreamOptions) {
    this.cursor = options.cursor ?? 0;
  }

  stop(): void {
    this.stopped = true;
    this.controller?.abort();
  }

  /** Consume until stopped (follow mode) or until the server hangs up. */
  async run(): Promise<void> {
    const follow = this.options.follow ?? true;
    const retry = this.options.retryDelayMs ?? 500;
    for (;;) {
      if (this.stopped) return;
      try {
        await this.consumeOnce(follow);
        this.options.onStale?.(false);
        if (!follow || this.stopped) return;
      } catch (err) {
        if (this.stopped) return;
        this.options.onStale?.(true);
        if (!follow) throw err;
      }
      await sleep(retry);
    }
  }

  private url(follow: boolean): string {
    const params = new URLSearchParams({ cursor: String(this.cursor) });
    if (this.options.requestId) params.set("request_id", this.options.requestId);
    if (!follow) params.set("follow", "false");
    return `${this.options.baseUrl}/v1/events?${params}`;
  }

  private async consumeOnce(follow: boolean): Promise<void> {
    this.controller = new AbortController();
    const resp = await fetch(this.url(follow), {
      headers: { Authorization: `Bearer ${this.options.token}` },
      signal: this.controller.signal,
    });
    if (!resp.ok || resp.body === null) {
      throw new Error(`event stream failed: ${resp.status}`);
    }
    this.options.onStale?.(false);
    const reader = resp.body.getReader();
    const decoder = new TextDecoder();
    let buffer = "";
    for (;;) {
      const { done, value } = await reader.read();
      if (done) return;
      buffer += decoder.decode(value, { stream: true });
      let sep: number;
      while ((sep = buffer.indexOf("\n\n")) >= 0) {
        const frame = buffer.slice(0, sep);
        buffer = buffer.slice(sep + 2);
        this.handleFrame(frame);
      }
    }
  }

  private handleFrame(frame: string): void {
    let data = "";
    for (const line of frame.split("\n")) {
      if (line.startsWith("data: ")) data += line.slice(6);
    }
    if (!data) return; // comment/keepalive frame
    const event = JSON.parse(data) as ApiEvent;
    if (event.seq > this.cursor) {
      this.cursor = event.seq;
      this.options.onEvent(event);
    }
  }
}
