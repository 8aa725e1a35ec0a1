// Hand-rolled SVG charts. No canvas, so they render (and are testable)
// anywhere a DOM exists. The chart type is always dictated by the server
// payload, never chosen here.

import type { ChartType } from "./types.js";

export interface SeriesPoint {
  label: string;
  value: number;
}

const SVG_NS = "http://www.w3.org/2000/svg";
const W = 320;
const H = 180;
const PAD = 24;

function el(tag: string, attrs: Record<string, string | number>): SVGElement {
  const node = document.createElementNS(SVG_NS, tag) as SVGElement;
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, String(v));
  return node;
}

function mix(primary: string, secondary: string, i: number): string {
  return i % 2 === 0 ? primary : secondary;
}

function barChart(svg: SVGElement, data: SeriesPoint[], primary: string, secondary: string): void {
  const max = Math.max(...data.map((d) => d.value), 1e-9);
  const slot = (W - 2 * PAD) / data.length;
  const barWidth = Math.max(slot * 0.6, 4);
  data.forEach((d, i) => {
    const h = ((H - 2 * PAD) * d.value) / max;
    const x = PAD + i * slot + (slot - barWidth) / 2;
    svg.appendChild(
      el("rect", {
        x,
        y: H - PAD - h,
        width: barWidth,
        height: h,
        fill: mix(primary, secondary, i),
        "data-label": d.label,
      }),
    );
    const caption = el("text", { x: x + barWidth / 2, y: H - PAD + 14, "text-anchor": "middle", "font-size": 10 });
    caption.textContent = d.label;
    svg.appendChild(caption);
  });
}

function pieChart(svg: SVGElement, data: SeriesPoint[], primary: string, secondary: string): void {
  const total = data.reduce((acc, d) => acc + d.value, 0);
  const cx = W / 2;
  const cy = H / 2;
  const r = H / 2 - PAD / 2;
  if (total <= 0) return;
  if (data.length === 1) {
    svg.appendChild(el("circle", { cx, cy, r, fill: primary, "data-label": data[0].label }));
    return;
  }
  let angle = -Math.PI / 2;
  data.forEach((d, i) => {
    const sweep = (2 * Math.PI * d.value) / total;
    const x0 = cx + r * Math.cos(angle);
    const y0 = cy + r * Math.sin(angle);
    angle += sweep;
    const x1 = cx + r * Math.cos(angle);
    const y1 = cy + r * Math.sin(angle);
    const large = sweep > Math.PI ? 1 : 0;
    svg.appendChild(
      el("path", {
        d: `M ${cx} ${cy} L ${x0} ${y0} A ${r} ${r} 0 ${large} 1 ${x1} ${y1} Z`,
        fill: mix(primary, secondary, i),
        "data-label": d.label,
      }),
    );
  });
}

function lineChart(svg: SVGElement, data: SeriesPoint[], primary: string, secondary: string): void {
  const max = Math.max(...data.map((d) => d.value), 1e-9);
  const step = data.length > 1 ? (W - 2 * PAD) / (data.length - 1) : 0;
  const points = data.map((d, i) => {
    const x = PAD + i * step;
    const y = H - PAD - ((H - 2 * PAD) * d.value) / max;
    return `${x},${y}`;
  });
  svg.appendChild(
    el("polyline", { points: points.join(" "), fill: "none", stroke: primary, "stroke-width": 2 }),
  );
  data.forEach((d, i) => {
    const [x, y] = points[i].split(",");
    svg.appendChild(el("circle", { cx: x, cy: y, r: 3, fill: secondary, "data-label": d.label }));
  });
}

/**
 * Builds a fresh SVG for the given chart type. The `data-chart`
 * attribute carries the mounted type so callers (and tests) can see
 * which presentation is live without inspecting geometry.
 */
export function renderChart(
  kind: ChartType,
  data: SeriesPoint[],
  primary: string,
  secondary: string,
): SVGElement {
  const svg = el("svg", {
    viewBox: `0 0 ${W} ${H}`,
    width: "100%",
    "data-chart": kind,
    role: "img",
  });
  if (data.length === 0) {
    const empty = el("text", { x: W / 2, y: H / 2, "text-anchor": "middle", "font-size": 12 });
    empty.textContent = "no consumption data";
    svg.appendChild(empty);
    return svg;
  }
  if (kind === "bar") barChart(svg, data, primary, secondary);
  else if (kind === "pie") pieChart(svg, data, primary, secondary);
  else lineChart(svg, data, primary, secondary);
  return svg;
}
