/**
 * Applies server-dictated UI context to the page: base font size on the
 * root element, theme colors as CSS custom properties, and the
 * consumption chart type. The backend decides what the presentation is;
 * this module only carries it out.
 *
 * A payload that fails validation is dropped with a non-blocking
 * warning and the previous presentation stays on screen untouched.
 */

import { renderChart, type SeriesPoint } from "./charts.js";
import { parseUiContext, type UIContext } from "./types.js";

export interface PresentationHost {
  /** Element whose font-size acts as the page base (usually <html>). */
  root: HTMLElement;
  /** Container the consumption chart is mounted into. */
  chartSlot: HTMLElement;
  /** Non-blocking warning sink (toast, status line, console...). */
  warn: (message: string) => void;
}

export class Presentation {
  private host: PresentationHost;
  private lastValid: UIContext | null = null;
  private data: SeriesPoint[] = [];

  constructor(host: PresentationHost) {
    this.host = host;
  }

  get current(): UIContext | null {
    return this.lastValid;
  }

  /**
   * Validates and applies a UI context payload. Returns true if it was
   * applied, false if it was rejected (prior presentation retained).
   */
  apply(payload: unknown, data?: SeriesPoint[]): boolean {
    const ui = parseUiContext(payload);
    if (ui === null) {
      this.host.warn("ignored an invalid ui-context payload; keeping the current presentation");
      return false;
    }
    if (data) this.data = data;
    this.lastValid = ui;
    this.host.root.style.fontSize = `${ui.font_size_px}px`;
    this.host.root.style.setProperty("--color-primary", ui.color_primary);
    this.host.root.style.setProperty("--color-secondary", ui.color_secondary);
    this.mountChart(ui);
    return true;
  }

  /** Re-renders the chart with fresh data under the last valid context. */
  refresh(data: SeriesPoint[]): void {
    this.data = data;
    if (this.lastValid) this.mountChart(this.lastValid);
  }

  private mountChart(ui: UIContext): void {
    const svg = renderChart(ui.chart_type, this.data, ui.color_primary, ui.color_secondary);
    this.host.chartSlot.replaceChildren(svg);
  }
}
