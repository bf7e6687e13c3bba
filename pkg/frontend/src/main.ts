// Bootstrap: wire the API client, stream subscription, store, and DOM.

import { ApiClient, ApiError } from "./api.js";
import { chartSvg } from "./chart.js";
import { renderAlertQueue, renderBanner, renderBoard, renderComponents, renderError } from "./render.js";
import { Store } from "./state.js";
import { StreamClient } from "./stream.js";
import { validateOverrides } from "./validate.js";

const api = new ApiClient("");
const store = new Store();

const el = (id: string) => document.getElementById(id) as HTMLElement;

async function refreshDetail(patientId: string): Promise<void> {
  const metricSel = el("metric-select") as HTMLSelectElement;
  const metric = metricSel.value || "CPK";
  try {
    const series = await api.timeseries(patientId, metric);
    let forecast = null;
    if (metric === "CPK") {
      forecast = await api.forecast(patientId).catch(() => null);
    }
    const threshold = metric === "CPK" ? 200 : null;
    el("chart").innerHTML = chartSvg(series.points, forecast, { threshold });
  } catch (err) {
    el("chart").innerHTML = `<div class="empty">${(err as Error).message}</div>`;
  }
  el("components").innerHTML = renderComponents(store.state, patientId);
}

function render(): void {
  el("banner").innerHTML = renderBanner(store.state);
  el("board").innerHTML = renderBoard(store.board(), store.state.selectedPatient);
  el("alerts").innerHTML = renderAlertQueue(store.alertQueue());
  el("error").innerHTML = renderError(store.state);
  const selected = store.state.selectedPatient;
  el("detail-title").textContent = selected ? `patient ${selected}` : "select a patient";
}

function surface(err: unknown): void {
  // 4xx bodies (e.g. ILLEGAL_TRANSITION, INVALID_OVERRIDE) render verbatim
  store.setError(err instanceof ApiError ? err.message : String(err));
}

async function onClick(event: Event): Promise<void> {
  const target = event.target as HTMLElement;
  const ack = target.getAttribute("data-ack");
  const resolve = target.getAttribute("data-resolve");
  const row = target.closest("[data-patient]") as HTMLElement | null;
  try {
    if (ack) {
      const by = (el("operator") as HTMLInputElement).value || "console-operator";
      store.upsertAlert(await api.ackAlert(ack, by));
      store.setError(null);
    } else if (resolve) {
      store.upsertAlert(await api.resolveAlert(resolve));
      store.setError(null);
    } else if (row) {
      const pid = row.getAttribute("data-patient")!;
      store.select(pid);
      await refreshDetail(pid);
    }
  } catch (err) {
    surface(err);
  }
}

async function onOverrideSubmit(event: Event): Promise<void> {
  event.preventDefault();
  const selected = store.state.selectedPatient;
  if (!selected) {
    store.setError("select a patient before overriding thresholds");
    return;
  }
  const field = (el("override-field") as HTMLSelectElement).value;
  const raw = (el("override-value") as HTMLInputElement).value;
  const overrides = { [field]: Number(raw) };
  const violation = validateOverrides(overrides);
  if (violation) {
    store.setError(violation);
    return;
  }
  try {
    const merged = await api.overrideThresholds(selected, overrides);
    store.setError(null);
    el("effective-thresholds").textContent = JSON.stringify(merged, null, 1);
  } catch (err) {
    surface(err);
  }
}

async function onCadenceChange(event: Event): Promise<void> {
  const selected = store.state.selectedPatient;
  const cadence = (event.target as HTMLSelectElement).value;
  if (!selected || !cadence) return;
  try {
    const profile = await api.setCadence(selected, cadence);
    store.loadPatients([profile]);
    store.setError(null);
  } catch (err) {
    surface(err);
  }
}

async function bootstrap(): Promise<void> {
  store.subscribe(render);
  store.loadPatients(await api.patients());
  store.loadAlerts(await api.alerts());
  const stream = new StreamClient("", {
    onEvent: (id, type, payload) => {
      store.applyStreamEvent(id, type, payload);
      const selected = store.state.selectedPatient;
      if (selected && type === "assessment"
          && (payload as { patient_id?: string }).patient_id === selected) {
        void refreshDetail(selected);
      }
    },
    onStatus: (status) => store.setConnection(status),
  });
  stream.connect(0);
  document.body.addEventListener("click", (ev) => void onClick(ev));
  el("override-form").addEventListener("submit", (ev) => void onOverrideSubmit(ev));
  el("cadence-select").addEventListener("change", (ev) => void onCadenceChange(ev));
  (el("metric-select") as HTMLSelectElement).addEventListener("change", () => {
    const selected = store.state.selectedPatient;
    if (selected) void refreshDetail(selected);
  });
}

void bootstrap();
