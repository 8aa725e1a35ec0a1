// Appliance list panel. Every user action here turns into an
// appliance_action event through the batcher; the backend derives all
// intelligence from those events. Local state only mirrors what was
// emitted so the list matches the session the backend sees.

import type { BehaviorBatcher } from "./capture.js";
import type { ApplianceView } from "./types.js";
import type { SeriesPoint } from "./charts.js";

export interface AppliancePanelOptions {
  onAction?: (verb: string, appliance: ApplianceView) => void;
}

export class AppliancePanel {
  private container: HTMLElement;
  private batcher: BehaviorBatcher;
  private opts: AppliancePanelOptions;
  items: ApplianceView[] = [];

  constructor(container: HTMLElement, batcher: BehaviorBatcher, opts: AppliancePanelOptions = {}) {
    this.container = container;
    this.batcher = batcher;
    this.opts = opts;
  }

  /** Seeds the list and announces each appliance to the backend. */
  seed(items: ApplianceView[]): void {
    this.items = items.map((a) => ({ ...a }));
    for (const a of this.items) {
      if (a.state === "On") this.emit("turn_on", a);
      else this.emit("view", a);
    }
    this.render();
  }

  find(id: string): ApplianceView | undefined {
    return this.items.find((a) => a.appliance_id === id);
  }

  view(id: string): void {
    const a = this.find(id);
    if (a) this.emit("view", a);
  }

  toggle(id: string): void {
    const a = this.find(id);
    if (!a) return;
    a.state = a.state === "On" ? "Off" : "On";
    this.emit(a.state === "On" ? "turn_on" : "turn_off", a);
    this.render();
  }

  setHours(id: string, hours: number): void {
    const a = this.find(id);
    if (!a || hours < 0) return;
    a.usage_hours = hours;
    this.emit("adjust_hours", a);
    this.render();
  }

  /** Consumption series for the chart: powered appliances only, in kWh. */
  consumption(): SeriesPoint[] {
    return this.items
      .filter((a) => a.state === "On")
      .map((a) => ({ label: a.name, value: (a.wattage_w * a.usage_hours) / 1000 }));
  }

  private emit(verb: string, a: ApplianceView): void {
    this.batcher.record("appliance_action", {
      appliance_id: a.appliance_id,
      wattage_w: a.wattage_w,
      usage_hours: a.usage_hours,
      action: verb,
    });
    this.opts.onAction?.(verb, a);
  }

  render(): void {
    const rows = this.items
      .map(
        (a) => `
      <li class="appliance" data-id="${a.appliance_id}" data-state="${a.state}">
        <span class="appliance-name"></span>
        <span class="appliance-draw">${a.wattage_w} W &middot; ${a.usage_hours} h</span>
        <button type="button" class="appliance-toggle">${a.state === "On" ? "Turn off" : "Turn on"}</button>
        <input class="appliance-hours" type="number" min="0" step="0.5" value="${a.usage_hours}" aria-label="Usage hours" />
      </li>`,
      )
      .join("");
    this.container.innerHTML = `<ul class="appliance-list">${rows}</ul>`;
    // names via textContent; they come from user-editable config
    this.container.querySelectorAll<HTMLElement>(".appliance").forEach((li, i) => {
      (li.querySelector(".appliance-name") as HTMLElement).textContent = this.items[i].name;
      (li.querySelector(".appliance-toggle") as HTMLButtonElement).addEventListener("click", () => {
        this.toggle(this.items[i].appliance_id);
      });
      (li.querySelector(".appliance-hours") as HTMLInputElement).addEventListener("change", (ev) => {
        const value = Number((ev.target as HTMLInputElement).value);
        if (Number.isFinite(value)) this.setHours(this.items[i].appliance_id, value);
      });
    });
  }
}
