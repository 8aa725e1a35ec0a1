/**
 * Emotion frame capture. Two modes:
 *
 *   stub   - posts a configured distribution on a timer. Default, since
 *            CI boxes and most dev machines have no camera.
 *   webcam - requires an explicit consent interaction first and a
 *            pluggable detector that turns video frames into
 *            distributions. Consent denied or no camera falls back to
 *            stub automatically.
 *
 * Frames are posted at most once per second. The phase field starts at
 * pre_nudge and flips to post_nudge after the first delivered nudge.
 */

import type { EmotionFrame, EmotionKey, NudgePhase } from "./types.js";
import { EMOTION_KEYS } from "./types.js";

export type EmotionMode = "stub" | "webcam";
export type Distribution = Record<EmotionKey, number>;
export type DetectorFn = () => Promise<Distribution | null>;

// mildly content default; sums to exactly 1 at 6 decimals
export const DEFAULT_STUB_FRAME: Distribution = {
  anger: 0.02,
  disgust: 0.02,
  fear: 0.02,
  happiness: 0.1,
  neutral: 0.78,
  sadness: 0.02,
  surprise: 0.04,
};

export const MIN_INTERVAL_MS = 1_000;

export interface EmotionOptions {
  mode?: EmotionMode;
  stubFrame?: Distribution;
  intervalMs?: number;
  /** Consent dialog hook; resolves true when the user agreed. */
  requestConsent?: () => Promise<boolean>;
  /** Webcam-backed detector; null result means "no reading this tick". */
  detector?: DetectorFn;
  warn?: (message: string) => void;
}

export class EmotionCapture {
  private post: (frame: EmotionFrame) => Promise<unknown>;
  private opts: EmotionOptions;
  private timer: ReturnType<typeof setInterval> | null = null;
  private phaseValue: NudgePhase = "pre_nudge";
  private activeMode: EmotionMode = "stub";

  constructor(post: (frame: EmotionFrame) => Promise<unknown>, opts: EmotionOptions = {}) {
    this.post = post;
    this.opts = opts;
  }

  get phase(): NudgePhase {
    return this.phaseValue;
  }

  get mode(): EmotionMode {
    return this.activeMode;
  }

  /** Marks the first delivery; every later frame reports post_nudge. */
  nudgeDelivered(): void {
    this.phaseValue = "post_nudge";
  }

  /** Resolves the capture mode, honoring consent, then starts the loop. */
  async start(): Promise<EmotionMode> {
    this.activeMode = await this.resolveMode();
    const interval = Math.max(this.opts.intervalMs ?? MIN_INTERVAL_MS, MIN_INTERVAL_MS);
    if (!this.timer) {
      this.timer = setInterval(() => {
        void this.captureOnce();
      }, interval);
    }
    return this.activeMode;
  }

  stop(): void {
    if (this.timer) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  /** Takes one reading and posts it with the current phase. */
  async captureOnce(): Promise<EmotionFrame | null> {
    let dist: Distribution | null;
    if (this.activeMode === "webcam" && this.opts.detector) {
      dist = await this.opts.detector();
      if (dist === null) return null; // detector had no face this tick
    } else {
      dist = this.opts.stubFrame ?? DEFAULT_STUB_FRAME;
    }
    const frame = { ...dist, phase: this.phaseValue } as EmotionFrame;
    try {
      await this.post(frame);
    } catch (err) {
      // server rejects malformed distributions; tell the user, keep going
      this.opts.warn?.(`emotion frame rejected: ${err instanceof Error ? err.message : err}`);
      return null;
    }
    return frame;
  }

  private async resolveMode(): Promise<EmotionMode> {
    if ((this.opts.mode ?? "stub") !== "webcam") return "stub";
    if (!this.opts.requestConsent) {
      this.opts.warn?.("webcam mode needs a consent hook; using stub frames");
      return "stub";
    }
    const agreed = await this.opts.requestConsent();
    if (!agreed) {
      this.opts.warn?.("webcam consent declined; using stub frames");
      return "stub";
    }
    const media = (globalThis.navigator as Navigator | undefined)?.mediaDevices;
    if (!media || !this.opts.detector) {
      this.opts.warn?.("no camera available; using stub frames");
      return "stub";
    }
    return "webcam";
  }
}

/** True when the values over the seven emotion keys sum to ~1. */
export function isNormalized(dist: Distribution): boolean {
  const total = EMOTION_KEYS.reduce((acc, k) => acc + (dist[k] ?? 0), 0);
  return Math.abs(total - 1) < 1e-6;
}
