import { beforeEach, describe, expect, it } from "vitest";

import { Presentation, type PresentationHost } from "../src/presentation.js";
import type { SeriesPoint } from "../src/charts.js";

const DATA: SeriesPoint[] = [
  { label: "heater", value: 6.0 },
  { label: "fridge", value: 3.6 },
  { label: "lamp", value: 1.5 },
];

function makeHost(): PresentationHost & { warnings: string[] } {
  const warnings: string[] = [];
  const chartSlot = document.createElement("div");
  document.body.replaceChildren(chartSlot);
  return {
    root: document.documentElement,
    chartSlot,
    warn: (msg: string) => warnings.push(msg),
    warnings,
  };
}

function validUi(overrides: Record<string, unknown> = {}) {
  return {
    font_size_px: 16,
    chart_type: "pie",
    color_primary: "#2d5f94",
    color_secondary: "#cfe0f0",
    ...overrides,
  };
}

describe("ui context application", () => {
  let host: ReturnType<typeof makeHost>;
  let pres: Presentation;

  beforeEach(() => {
    host = makeHost();
    pres = new Presentation(host);
  });

  it("font 24 with bar chart lands as computed 24px base font and a mounted bar chart", () => {
    const applied = pres.apply(validUi({ font_size_px: 24, chart_type: "bar" }), DATA);
    expect(applied).toBe(true);

    const computed = getComputedStyle(document.documentElement).fontSize;
    expect(computed).toBe("24px");

    const svg = host.chartSlot.querySelector("svg");
    expect(svg).not.toBeNull();
    expect(svg!.getAttribute("data-chart")).toBe("bar");
    expect(svg!.querySelectorAll("rect")).toHaveLength(DATA.length);
  });

  it("font 11 is rejected and the previous presentation stays intact", () => {
    pres.apply(validUi({ font_size_px: 24, chart_type: "bar" }), DATA);

    const applied = pres.apply(validUi({ font_size_px: 11, chart_type: "line" }));
    expect(applied).toBe(false);

    expect(getComputedStyle(document.documentElement).fontSize).toBe("24px");
    expect(host.chartSlot.querySelector("svg")!.getAttribute("data-chart")).toBe("bar");
    expect(pres.current!.font_size_px).toBe(24);
    expect(host.warnings.length).toBe(1);
  });

  it("font 25 is out of bounds too", () => {
    pres.apply(validUi({ font_size_px: 16 }), DATA);
    expect(pres.apply(validUi({ font_size_px: 25 }))).toBe(false);
    expect(pres.current!.font_size_px).toBe(16);
  });

  it("pie then line payload sequence swaps the chart on the same slot without reload", () => {
    pres.apply(validUi({ chart_type: "pie" }), DATA);
    const slotBefore = host.chartSlot;
    expect(host.chartSlot.querySelector("svg")!.getAttribute("data-chart")).toBe("pie");

    pres.apply(validUi({ chart_type: "line" }));
    expect(host.chartSlot).toBe(slotBefore);
    expect(host.chartSlot.querySelector("svg")!.getAttribute("data-chart")).toBe("line");
    expect(host.chartSlot.querySelectorAll("svg")).toHaveLength(1);
  });

  it("applies theme colors as custom properties", () => {
    pres.apply(validUi({ color_primary: "#AA00FF", color_secondary: "#001122" }), DATA);
    expect(document.documentElement.style.getPropertyValue("--color-primary")).toBe("#aa00ff");
    expect(document.documentElement.style.getPropertyValue("--color-secondary")).toBe("#001122");
  });

  it.each([
    ["missing font", { font_size_px: undefined }],
    ["fractional font", { font_size_px: 16.5 }],
    ["string font", { font_size_px: "16" }],
    ["unknown chart", { chart_type: "donut" }],
    ["bad hex", { color_primary: "blue" }],
    ["short hex", { color_secondary: "#fff" }],
  ])("rejects %s", (_label, overrides) => {
    pres.apply(validUi({ font_size_px: 19 }), DATA);
    expect(pres.apply(validUi(overrides as Record<string, unknown>))).toBe(false);
    expect(pres.current!.font_size_px).toBe(19);
  });

  it("rejects non-object payloads without dropping the presentation", () => {
    pres.apply(validUi(), DATA);
    for (const garbage of [null, undefined, 42, "ui", []]) {
      expect(pres.apply(garbage)).toBe(false);
    }
    expect(pres.current).not.toBeNull();
    expect(host.warnings.length).toBe(5);
  });

  it("refresh re-renders the chart with new data under the last valid context", () => {
    pres.apply(validUi({ chart_type: "bar" }), DATA);
    pres.refresh([{ label: "heater", value: 6.0 }]);
    const svg = host.chartSlot.querySelector("svg")!;
    expect(svg.getAttribute("data-chart")).toBe("bar");
    expect(svg.querySelectorAll("rect")).toHaveLength(1);
  });

  it("starts with no presentation until the first valid payload", () => {
    expect(pres.current).toBeNull();
    expect(host.chartSlot.querySelector("svg")).toBeNull();
  });
});
