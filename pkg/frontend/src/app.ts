/**
 * Dashboard wiring. Owns the session lifecycle and connects the pieces:
 * appliance panel -> behavior batcher -> engine API -> presentation /
 * nudge card / emotion capture. All adaptation decisions come back from
 * the server as UIContext payloads; nothing here invents its own.
 */

import { EngineApi } from "./api.js";
import { AppliancePanel } from "./appliances.js";
import { BehaviorBatcher } from "./capture.js";
import { EmotionCapture, type EmotionOptions } from "./emotion.js";
import { NudgeCard } from "./nudge.js";
import { Presentation, type PresentationHost } from "./presentation.js";
import type { ApplianceView, Device, PipelineOutcome } from "./types.js";
import { isDelivered } from "./types.js";

export const AUTO_TRIGGER_ACTIONS = 5;

export interface DashboardElements {
  root: HTMLElement;
  chartSlot: HTMLElement;
  applianceSlot: HTMLElement;
  nudgeSlot: HTMLElement;
  suggestButton: HTMLButtonElement;
  warningsSlot: HTMLElement;
}

export interface DashboardOptions {
  reasoner?: "rule" | "llm";
  /** Pipeline run fires on its own after this many appliance actions; 0 disables. */
  autoTriggerAfter?: number;
  emotion?: EmotionOptions;
  device?: Device;
}

export class Dashboard {
  api: EngineApi;
  sessionId = "";
  presentation: Presentation;
  batcher!: BehaviorBatcher;
  appliances!: AppliancePanel;
  nudgeCard: NudgeCard;
  emotion!: EmotionCapture;
  lastOutcome: PipelineOutcome | null = null;

  private els: DashboardElements;
  private opts: DashboardOptions;
  private runInFlight = false;
  private actionsSinceRun = 0;

  constructor(api: EngineApi, els: DashboardElements, opts: DashboardOptions = {}) {
    this.api = api;
    this.els = els;
    this.opts = opts;
    const host: PresentationHost = {
      root: els.root,
      chartSlot: els.chartSlot,
      warn: (msg) => this.warn(msg),
    };
    this.presentation = new Presentation(host);
    this.nudgeCard = new NudgeCard(els.nudgeSlot, (nudgeId, thumbs) =>
      this.api.feedback(this.sessionId, nudgeId, thumbs),
    );
    els.suggestButton.addEventListener("click", () => {
      void this.requestNudge();
    });
  }

  /** Creates the session, reports context, starts capture loops. */
  async init(appliances: ApplianceView[]): Promise<string> {
    const created = await this.api.createSession();
    this.sessionId = created.session_id;

    const device: Device =
      this.opts.device ??
      (/mobi/i.test(globalThis.navigator?.userAgent ?? "") ? "mobile" : "desktop");
    await this.api.setContext(this.sessionId, device);

    this.batcher = new BehaviorBatcher(this.sessionId, (events) =>
      this.api.postEvents(this.sessionId, events),
    );
    this.appliances = new AppliancePanel(this.els.applianceSlot, this.batcher, {
      onAction: () => this.onApplianceAction(),
    });
    this.emotion = new EmotionCapture(
      (frame) => this.api.postEmotion(this.sessionId, frame),
      { warn: (msg) => this.warn(msg), ...this.opts.emotion },
    );

    this.appliances.seed(appliances);
    this.hookGlobalEvents();
    this.batcher.start();
    await this.emotion.start();
    return this.sessionId;
  }

  /**
   * Runs the pipeline once. At most one request is in flight; repeat
   * calls while one is pending are dropped.
   */
  async requestNudge(): Promise<PipelineOutcome | null> {
    if (this.runInFlight || !this.sessionId) return null;
    this.runInFlight = true;
    this.els.suggestButton.disabled = true;
    try {
      // everything recorded so far must reach the backend first
      const drained = await this.batcher.drain();
      if (!drained) {
        this.warn("could not reach the engine; suggestion postponed");
        return null;
      }
      const outcome = await this.api.run(this.sessionId, this.opts.reasoner ?? "rule");
      this.lastOutcome = outcome;
      this.actionsSinceRun = 0;
      if (isDelivered(outcome)) {
        this.nudgeCard.show(outcome);
        this.emotion.nudgeDelivered();
        this.presentation.apply(outcome.delivery.ui, this.appliances.consumption());
      }
      return outcome;
    } catch (err) {
      this.warn(`suggestion request failed: ${err instanceof Error ? err.message : err}`);
      return null;
    } finally {
      this.runInFlight = false;
      this.els.suggestButton.disabled = false;
    }
  }

  warn(message: string): void {
    const note = document.createElement("div");
    note.className = "warning";
    note.setAttribute("role", "status");
    note.textContent = message;
    this.els.warningsSlot.prepend(note);
    while (this.els.warningsSlot.children.length > 5) {
      this.els.warningsSlot.lastChild?.remove();
    }
  }

  private onApplianceAction(): void {
    this.presentation.refresh(this.appliances.consumption());
    this.actionsSinceRun += 1;
    const threshold = this.opts.autoTriggerAfter ?? AUTO_TRIGGER_ACTIONS;
    if (threshold > 0 && this.actionsSinceRun >= threshold && !this.runInFlight) {
      void this.requestNudge();
    }
  }

  private hookGlobalEvents(): void {
    const doc = this.els.root.ownerDocument;
    doc.addEventListener("click", () => this.batcher.record("click"));
    const win = doc.defaultView;
    win?.addEventListener("focus", () => this.batcher.record("page_focus"));
    win?.addEventListener("blur", () => this.batcher.record("page_blur"));
  }

  dispose(): void {
    this.batcher?.stop();
    this.emotion?.stop();
  }
}
