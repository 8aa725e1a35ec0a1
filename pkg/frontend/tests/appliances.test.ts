import { beforeEach, describe, expect, it } from "vitest";

import { AppliancePanel } from "../src/appliances.js";
import { BehaviorBatcher } from "../src/capture.js";
import type { ApplianceView, RawEventPayload } from "../src/types.js";

const HEATER: ApplianceView = {
  appliance_id: "heater",
  name: "Space heater",
  wattage_w: 2000,
  usage_hours: 3,
  state: "Off",
};

const LAMP: ApplianceView = {
  appliance_id: "lamp",
  name: "Desk lamp",
  wattage_w: 300,
  usage_hours: 5,
  state: "On",
};

describe("appliance panel", () => {
  let container: HTMLElement;
  let sent: RawEventPayload[][];
  let batcher: BehaviorBatcher;

  beforeEach(() => {
    container = document.createElement("div");
    document.body.replaceChildren(container);
    sent = [];
    batcher = new BehaviorBatcher("s1", async (events) => {
      sent.push(events);
      return {};
    });
  });

  it("toggling a heater emits a turn_on action with wattage attributes", async () => {
    const panel = new AppliancePanel(container, batcher);
    panel.seed([{ ...HEATER }]);
    panel.toggle("heater");
    await batcher.flush();

    const all = sent.flat();
    const toggled = all[all.length - 1];
    expect(toggled.kind).toBe("appliance_action");
    expect(toggled.attributes).toMatchObject({
      appliance_id: "heater",
      wattage_w: 2000,
      usage_hours: 3,
      action: "turn_on",
    });
    expect(panel.find("heater")!.state).toBe("On");
  });

  it("toggling twice round-trips back to off", async () => {
    const panel = new AppliancePanel(container, batcher);
    panel.seed([{ ...HEATER }]);
    panel.toggle("heater");
    panel.toggle("heater");
    await batcher.flush();
    const actions = sent.flat().map((e) => e.attributes.action);
    expect(actions).toEqual(["view", "turn_on", "turn_off"]);
    expect(panel.find("heater")!.state).toBe("Off");
  });

  it("lowering hours emits adjust_hours with the new value", async () => {
    const panel = new AppliancePanel(container, batcher);
    panel.seed([{ ...LAMP }]);
    panel.setHours("lamp", 2);
    await batcher.flush();
    const last = sent.flat().pop()!;
    expect(last.attributes.action).toBe("adjust_hours");
    expect(last.attributes.usage_hours).toBe(2);
    expect(panel.find("lamp")!.usage_hours).toBe(2);
  });

  it("seeding announces powered appliances as turn_on and idle ones as view", async () => {
    const panel = new AppliancePanel(container, batcher);
    panel.seed([{ ...HEATER }, { ...LAMP }]);
    await batcher.flush();
    const byId = new Map(sent.flat().map((e) => [e.attributes.appliance_id, e.attributes.action]));
    expect(byId.get("heater")).toBe("view");
    expect(byId.get("lamp")).toBe("turn_on");
  });

  it("renders a row per appliance with its live state", () => {
    const panel = new AppliancePanel(container, batcher);
    panel.seed([{ ...HEATER }, { ...LAMP }]);
    const rows = container.querySelectorAll(".appliance");
    expect(rows).toHaveLength(2);
    expect(rows[0].getAttribute("data-state")).toBe("Off");
    expect(rows[1].getAttribute("data-state")).toBe("On");

    (rows[0].querySelector(".appliance-toggle") as HTMLButtonElement).click();
    expect(
      container.querySelector('[data-id="heater"]')!.getAttribute("data-state"),
    ).toBe("On");
  });

  it("consumption series covers powered appliances only, in kWh", () => {
    const panel = new AppliancePanel(container, batcher);
    panel.seed([{ ...HEATER }, { ...LAMP }]);
    expect(panel.consumption()).toEqual([{ label: "Desk lamp", value: 1.5 }]);
    panel.toggle("heater");
    expect(panel.consumption()).toEqual([
      { label: "Space heater", value: 6 },
      { label: "Desk lamp", value: 1.5 },
    ]);
  });

  it("ignores unknown ids and negative hours", () => {
    const panel = new AppliancePanel(container, batcher);
    panel.seed([{ ...LAMP }]);
    const before = batcher.pending;
    panel.toggle("ghost");
    panel.setHours("lamp", -1);
    expect(batcher.pending).toBe(before);
    expect(panel.find("lamp")!.usage_hours).toBe(5);
  });
});
