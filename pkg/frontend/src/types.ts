/**
 * Wire types for the engine HTTP API plus client-side payload checks.
 *
 * The backend is the single source of truth for presentation decisions;
 * this module only mirrors its shapes and refuses payloads that do not
 * fit them. Validation failures never throw, they return null so the
 * caller can keep the last good state on screen.
 */

export const FONT_MIN_PX = 12;
export const FONT_MAX_PX = 24;

export type ChartType = "bar" | "pie" | "line";
export type Thumb = "up" | "down";
export type Device = "desktop" | "mobile";
export type NudgePhase = "pre_nudge" | "post_nudge";

export const EMOTION_KEYS = [
  "anger",
  "disgust",
  "fear",
  "happiness",
  "neutral",
  "sadness",
  "surprise",
] as const;

export type EmotionKey = (typeof EMOTION_KEYS)[number];

export interface UIContext {
  font_size_px: number;
  chart_type: ChartType;
  color_primary: string;
  color_secondary: string;
}

export interface NudgeDelivery {
  nudge_id: string;
  session_id: string;
  strategy_id: string;
  message: string;
  explanation: string;
  ui: UIContext;
  delivered_at: string;
}

export interface PipelineOutcome {
  session_id: string;
  status: "delivered" | "no_nudge";
  delivery: NudgeDelivery | null;
  reason: string | null;
}

export interface ApplianceView {
  appliance_id: string;
  name: string;
  wattage_w: number;
  usage_hours: number;
  state: "On" | "Off";
}

export type EmotionFrame = Record<EmotionKey, number> & { phase: NudgePhase };

export interface RawEventPayload {
  session_id: string;
  kind: "click" | "hover" | "page_focus" | "page_blur" | "appliance_action" | "emotion_frame";
  at: string;
  attributes: Record<string, unknown>;
}

export interface FeedbackRecord {
  session_id: string;
  nudge_id: string;
  thumbs: Thumb;
  at: string;
}

const HEX_COLOR = /^#[0-9a-f]{6}$/i;
const CHART_TYPES: ReadonlySet<string> = new Set(["bar", "pie", "line"]);

/** Accepts the payload only if it is a complete, in-bounds UIContext. */
export function parseUiContext(payload: unknown): UIContext | null {
  if (typeof payload !== "object" || payload === null) return null;
  const p = payload as Record<string, unknown>;
  const font = p.font_size_px;
  if (typeof font !== "number" || !Number.isInteger(font)) return null;
  if (font < FONT_MIN_PX || font > FONT_MAX_PX) return null;
  const chart = p.chart_type;
  if (typeof chart !== "string" || !CHART_TYPES.has(chart)) return null;
  const primary = p.color_primary;
  const secondary = p.color_secondary;
  if (typeof primary !== "string" || !HEX_COLOR.test(primary)) return null;
  if (typeof secondary !== "string" || !HEX_COLOR.test(secondary)) return null;
  return {
    font_size_px: font,
    chart_type: chart as ChartType,
    color_primary: primary.toLowerCase(),
    color_secondary: secondary.toLowerCase(),
  };
}

export function isDelivered(outcome: PipelineOutcome): outcome is PipelineOutcome & { delivery: NudgeDelivery } {
  return outcome.status === "delivered" && outcome.delivery !== null;
}
