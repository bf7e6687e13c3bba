// HTML renderers: pure functions from state to markup. main.ts owns the
// DOM and event wiring; keeping these as strings keeps them testable
// without a browser.

import type { ConsoleState } from "./state.js";
import type { Alert, Patient } from "./types.js";

function esc(value: unknown): string {
  return String(value)
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function renderBanner(state: ConsoleState): string {
  if (state.connection === "degraded") {
    return `<div class="banner degraded">stream disconnected &mdash; reconnecting, data may be stale</div>`;
  }
  if (state.connection === "connecting") {
    return `<div class="banner connecting">connecting&hellip;</div>`;
  }
  const link = state.linkState ? ` &middot; gateway link: ${esc(state.linkState)}` : "";
  return `<div class="banner live">live${link}</div>`;
}

export function renderBoard(patients: Patient[], selected: string | null): string {
  if (patients.length === 0) {
    return `<div class="empty">no patients yet</div>`;
  }
  const rows = patients
    .map((p) => {
      const tier = p.latest_tier ?? "&mdash;";
      const score = p.latest_scaled_score == null ? "" : p.latest_scaled_score.toFixed(2);
      const sel = p.patient_id === selected ? " selected" : "";
      return (
        `<tr class="row${sel}" data-patient="${esc(p.patient_id)}">` +
        `<td>${esc(p.display_name || p.patient_id)}</td>` +
        `<td><span class="tier tier-${esc(p.latest_tier ?? "NONE")}">${tier}</span></td>` +
        `<td class="num">${score}</td>` +
        `<td>${esc(p.monitoring_cadence)}</td></tr>`
      );
    })
    .join("");
  return (
    `<table class="board"><thead><tr><th>patient</th><th>tier</th>` +
    `<th>score</th><th>cadence</th></tr></thead><tbody>${rows}</tbody></table>`
  );
}

export function renderAlertQueue(alerts: Alert[]): string {
  if (alerts.length === 0) {
    return `<div class="empty">no alerts</div>`;
  }
  const rows = alerts
    .map((a) => {
      const actions =
        a.state === "OPEN"
          ? `<button data-ack="${esc(a.alert_id)}">ack</button>` +
            `<button data-resolve="${esc(a.alert_id)}">resolve</button>`
          : a.state === "ACKED"
            ? `<button data-resolve="${esc(a.alert_id)}">resolve</button>` +
              `<span class="who">by ${esc(a.acked_by ?? "")}</span>`
            : "";
      return (
        `<div class="alert sev-${esc(a.severity)} state-${esc(a.state)}" data-alert="${esc(a.alert_id)}">` +
        `<span class="sev">${esc(a.severity)}</span>` +
        `<span class="rule">${esc(a.rule_id)}</span>` +
        `<span class="pid">${esc(a.patient_id)}</span>` +
        `<span class="state">${esc(a.state)}</span>` +
        `<span class="actions">${actions}</span></div>`
      );
    })
    .join("");
  return `<div class="alert-queue">${rows}</div>`;
}

export function renderComponents(state: ConsoleState, patientId: string): string {
  const assessment = state.latest.get(patientId);
  if (!assessment) {
    return `<div class="empty">no assessment yet</div>`;
  }
  const parts = Object.entries(assessment.components)
    .map(([name, value]) => `<li>${esc(name)}: ${Number(value).toFixed(4)}</li>`)
    .join("");
  const stale = assessment.stale ? ` <span class="stale">STALE INPUTS</span>` : "";
  return (
    `<div class="assessment"><b>${esc(assessment.tier)}</b> ` +
    `score ${assessment.scaled_score.toFixed(2)}/10 (raw ${assessment.raw_score.toFixed(4)})${stale}` +
    `<ul class="components">${parts}</ul></div>`
  );
}

export function renderError(state: ConsoleState): string {
  if (!state.inlineError) return "";
  return `<div class="inline-error">${esc(state.inlineError)}</div>`;
}
