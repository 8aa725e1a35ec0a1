/**
 * Behavioral event batcher. Interaction events (clicks, focus/blur,
 * appliance actions) are buffered locally and shipped to the ingestion
 * endpoint in batches: a flush fires when 20 events are waiting or on a
 * 5 second timer, whichever comes first. Hesitation is derived
 * server-side from the timestamps, so ordering matters and every event
 * is stamped when it is recorded, not when it is sent.
 *
 * Transport failures keep the batch in the buffer for the next attempt.
 * The buffer is capped at 500 events; past that the oldest events are
 * dropped and a console warning notes the loss.
 */

import type { RawEventPayload } from "./types.js";

export const FLUSH_INTERVAL_MS = 5_000;
export const FLUSH_BATCH_SIZE = 20;
export const BUFFER_CAP = 500;

type EventKind = RawEventPayload["kind"];
type PostFn = (events: RawEventPayload[]) => Promise<unknown>;

export interface BatcherOptions {
  flushMs?: number;
  batchSize?: number;
  bufferCap?: number;
  /** Clock override for tests; defaults to Date.now. */
  now?: () => number;
  /** Called after each flush attempt with the outcome. */
  onFlush?: (ok: boolean, sentCount: number) => void;
}

export class BehaviorBatcher {
  private sessionId: string;
  private post: PostFn;
  private buffer: RawEventPayload[] = [];
  private timer: ReturnType<typeof setInterval> | null = null;
  private inFlight: Promise<boolean> | null = null;
  private lastStampMs = 0;
  private opts: Required<Pick<BatcherOptions, "flushMs" | "batchSize" | "bufferCap">> &
    Pick<BatcherOptions, "now" | "onFlush">;

  constructor(sessionId: string, post: PostFn, opts: BatcherOptions = {}) {
    this.sessionId = sessionId;
    this.post = post;
    this.opts = {
      flushMs: opts.flushMs ?? FLUSH_INTERVAL_MS,
      batchSize: opts.batchSize ?? FLUSH_BATCH_SIZE,
      bufferCap: opts.bufferCap ?? BUFFER_CAP,
      now: opts.now,
      onFlush: opts.onFlush,
    };
  }

  get pending(): number {
    return this.buffer.length;
  }

  start(): void {
    if (this.timer) return;
    this.timer = setInterval(() => {
      void this.flush();
    }, this.opts.flushMs);
  }

  stop(): void {
    if (this.timer) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  /** Stamps and buffers one event; may trigger a size-based flush. */
  record(kind: EventKind, attributes: Record<string, unknown> = {}): void {
    // ingestion rejects batches that go backwards in time, so clamp
    const nowMs = Math.max((this.opts.now ?? Date.now)(), this.lastStampMs);
    this.lastStampMs = nowMs;
    this.buffer.push({
      session_id: this.sessionId,
      kind,
      at: new Date(nowMs).toISOString(),
      attributes,
    });
    if (this.buffer.length > this.opts.bufferCap) {
      const overflow = this.buffer.length - this.opts.bufferCap;
      this.buffer.splice(0, overflow);
      console.warn(`behavior buffer full (${this.opts.bufferCap}); dropped ${overflow} oldest event(s)`);
    }
    if (this.buffer.length >= this.opts.batchSize) {
      void this.flush();
    }
  }

  /**
   * Ships everything currently buffered. Resolves true when the batch
   * was accepted (or there was nothing to send); false leaves the
   * events in place for a later retry. Concurrent callers share one
   * in-flight attempt.
   */
  flush(): Promise<boolean> {
    if (this.inFlight) return this.inFlight;
    if (this.buffer.length === 0) return Promise.resolve(true);
    const batch = this.buffer.slice();
    this.inFlight = this.post(batch)
      .then(() => {
        this.buffer.splice(0, batch.length);
        this.opts.onFlush?.(true, batch.length);
        return true;
      })
      .catch(() => {
        this.opts.onFlush?.(false, 0);
        return false;
      })
      .finally(() => {
        this.inFlight = null;
      });
    return this.inFlight;
  }

  /** Flushes until the buffer drains or an attempt fails. */
  async drain(): Promise<boolean> {
    while (this.buffer.length > 0) {
      const ok = await this.flush();
      if (!ok) return false;
    }
    return true;
  }
}
