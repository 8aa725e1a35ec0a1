/**
 * Nudge card with a transparency panel and one-shot feedback buttons.
 *
 * A delivered outcome mounts a card showing the message, a "why this
 * suggestion?" toggle revealing the explanation, and thumbs up/down.
 * Feedback posts exactly once per nudge: the buttons disable the moment
 * one is pressed and a per-nudge guard swallows double fires. A failed
 * POST re-enables them so the user can retry. NoNudge outcomes leave
 * the dashboard untouched.
 */

import type { PipelineOutcome, Thumb } from "./types.js";
import { isDelivered } from "./types.js";

type FeedbackFn = (nudgeId: string, thumbs: Thumb) => Promise<unknown>;

export class NudgeCard {
  private slot: HTMLElement;
  private sendFeedback: FeedbackFn;
  private submitted = new Set<string>();
  private posting = false;

  constructor(slot: HTMLElement, sendFeedback: FeedbackFn) {
    this.slot = slot;
    this.sendFeedback = sendFeedback;
  }

  /** Renders the outcome. Returns true when a card was mounted. */
  show(outcome: PipelineOutcome): boolean {
    if (!isDelivered(outcome)) return false;
    const d = outcome.delivery;
    const card = document.createElement("div");
    card.className = "nudge-card";
    card.dataset.nudgeId = d.nudge_id;
    card.dataset.strategyId = d.strategy_id;
    card.innerHTML = `
      <p class="nudge-message"></p>
      <button type="button" class="nudge-why">Why this suggestion?</button>
      <div class="nudge-explanation" hidden></div>
      <div class="nudge-thumbs">
        <button type="button" class="thumb" data-thumb="up" aria-label="Helpful">&#128077;</button>
        <button type="button" class="thumb" data-thumb="down" aria-label="Not helpful">&#128078;</button>
      </div>
    `;
    // textContent, not innerHTML: the message is data, never markup
    (card.querySelector(".nudge-message") as HTMLElement).textContent = d.message;
    (card.querySelector(".nudge-explanation") as HTMLElement).textContent = d.explanation;

    const why = card.querySelector(".nudge-why") as HTMLButtonElement;
    const panel = card.querySelector(".nudge-explanation") as HTMLElement;
    why.addEventListener("click", () => {
      panel.hidden = !panel.hidden;
    });

    for (const btn of card.querySelectorAll<HTMLButtonElement>(".thumb")) {
      btn.addEventListener("click", () => {
        void this.submit(d.nudge_id, btn.dataset.thumb as Thumb, card);
      });
    }

    this.slot.replaceChildren(card);
    return true;
  }

  /** At most one successful feedback POST per nudge id. */
  async submit(nudgeId: string, thumbs: Thumb, card?: HTMLElement): Promise<boolean> {
    if (this.posting || this.submitted.has(nudgeId)) return false;
    this.posting = true;
    const buttons = card
      ? Array.from(card.querySelectorAll<HTMLButtonElement>(".thumb"))
      : [];
    for (const b of buttons) b.disabled = true;
    try {
      await this.sendFeedback(nudgeId, thumbs);
      this.submitted.add(nudgeId);
      card?.classList.add("feedback-sent");
      return true;
    } catch {
      for (const b of buttons) b.disabled = false; // let the user retry
      return false;
    } finally {
      this.posting = false;
    }
  }

  hasFeedback(nudgeId: string): boolean {
    return this.submitted.has(nudgeId);
  }
}
