// Browser entry point. Builds the page scaffold, seeds a demo
// appliance set, and boots the dashboard against the engine API. The
// API origin defaults to the page origin and can be overridden with
// ?api=http://host:port for local development.

import { EngineApi } from "./api.js";
import { Dashboard, type DashboardElements } from "./app.js";
import type { ApplianceView } from "./types.js";

const DEMO_APPLIANCES: ApplianceView[] = [
  { appliance_id: "heater", name: "Space heater", wattage_w: 2000, usage_hours: 3, state: "On" },
  { appliance_id: "fridge", name: "Fridge", wattage_w: 150, usage_hours: 24, state: "On" },
  { appliance_id: "lamp", name: "Desk lamp", wattage_w: 300, usage_hours: 5, state: "Off" },
  { appliance_id: "tv", name: "Television", wattage_w: 120, usage_hours: 4, state: "Off" },
];

function buildScaffold(mount: HTMLElement): DashboardElements {
  mount.innerHTML = `
    <header class="topbar">
      <h1>Energy dashboard</h1>
      <button type="button" id="suggest">Get suggestion</button>
    </header>
    <div id="warnings" aria-live="polite"></div>
    <main class="columns">
      <section id="appliances" aria-label="Appliances"></section>
      <section id="consumption" aria-label="Consumption chart"></section>
    </main>
    <aside id="nudge-slot" aria-live="polite"></aside>
  `;
  return {
    root: mount.ownerDocument.documentElement,
    chartSlot: mount.querySelector("#consumption") as HTMLElement,
    applianceSlot: mount.querySelector("#appliances") as HTMLElement,
    nudgeSlot: mount.querySelector("#nudge-slot") as HTMLElement,
    suggestButton: mount.querySelector("#suggest") as HTMLButtonElement,
    warningsSlot: mount.querySelector("#warnings") as HTMLElement,
  };
}

export async function boot(mount: HTMLElement): Promise<Dashboard> {
  const params = new URLSearchParams(mount.ownerDocument.defaultView?.location.search ?? "");
  const apiBase = params.get("api") ?? mount.ownerDocument.defaultView?.location.origin ?? "";
  const els = buildScaffold(mount);
  const dash = new Dashboard(new EngineApi(apiBase), els, {
    emotion: {
      mode: "stub",
      requestConsent: async () =>
        mount.ownerDocument.defaultView?.confirm("Allow webcam emotion capture?") ?? false,
    },
  });
  await dash.init(DEMO_APPLIANCES);
  return dash;
}

const mountPoint = typeof document !== "undefined" ? document.getElementById("app") : null;
if (mountPoint) {
  boot(mountPoint).catch((err) => {
    mountPoint.textContent = `failed to start: ${err instanceof Error ? err.message : err}`;
  });
}
