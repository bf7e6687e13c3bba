// The console's single state store. All numbers come from the server:
// stream events and confirmed API responses update it, renderers read it.
// There are no optimistic updates anywhere.

import type { Alert, Assessment, Patient, Severity, Tier } from "./types.js";
import { SEVERITY_ORDER } from "./types.js";

export type Connection = "connecting" | "live" | "degraded";

export interface ConsoleState {
  patients: Map<string, Patient>;
  latest: Map<string, Assessment>;
  alerts: Map<string, Alert>;
  linkState: string | null;
  connection: Connection;
  lastEventId: number;
  selectedPatient: string | null;
  inlineError: string | null;
}

export function initialState(): ConsoleState {
  return {
    patients: new Map(),
    latest: new Map(),
    alerts: new Map(),
    linkState: null,
    connection: "connecting",
    lastEventId: 0,
    selectedPatient: null,
    inlineError: null,
  };
}

type Listener = (state: ConsoleState) => void;

export class Store {
  state = initialState();
  private listeners: Listener[] = [];

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private emit(): void {
    for (const listener of this.listeners) listener(this.state);
  }

  loadPatients(patients: Patient[]): void {
    for (const p of patients) this.state.patients.set(p.patient_id, p);
    this.emit();
  }

  loadAlerts(alerts: Alert[]): void {
    for (const a of alerts) this.state.alerts.set(a.alert_id, a);
    this.emit();
  }

  /** Server-confirmed alert record (from a POST response or stream event). */
  upsertAlert(alert: Alert): void {
    this.state.alerts.set(alert.alert_id, alert);
    this.emit();
  }

  select(patientId: string | null): void {
    this.state.selectedPatient = patientId;
    this.emit();
  }

  setConnection(connection: Connection): void {
    this.state.connection = connection;
    this.emit();
  }

  setError(message: string | null): void {
    this.state.inlineError = message;
    this.emit();
  }

  applyStreamEvent(id: number, type: string, payload: unknown): void {
    if (id > 0) this.state.lastEventId = Math.max(this.state.lastEventId, id);
    if (type === "assessment") {
      const a = payload as Assessment;
      this.state.latest.set(a.patient_id, a);
      const patient = this.state.patients.get(a.patient_id);
      if (patient) {
        patient.latest_tier = a.tier;
        patient.latest_scaled_score = a.scaled_score;
      }
    } else if (type === "alert") {
      const wrapped = payload as { alert: Alert };
      this.state.alerts.set(wrapped.alert.alert_id, wrapped.alert);
    } else if (type === "link_state") {
      this.state.linkState = (payload as { active_link: string }).active_link;
    }
    // reading events only bump lastEventId; charts re-fetch on demand
    this.emit();
  }

  /** Alert queue: active first, EMERGENCY > URGENT > ADVISORY, newest first. */
  alertQueue(): Alert[] {
    const rank = (a: Alert) => [
      a.state === "RESOLVED" ? 1 : 0,
      SEVERITY_ORDER[a.severity as Severity],
      -a.created_at,
    ];
    return [...this.state.alerts.values()].sort((x, y) => {
      const [a, b] = [rank(x), rank(y)];
      for (let i = 0; i < a.length; i++) {
        if (a[i] !== b[i]) return a[i] < b[i] ? -1 : 1;
      }
      return x.alert_id < y.alert_id ? -1 : 1;
    });
  }

  /** Patient rows sorted worst-first by tier, then score. */
  board(): Patient[] {
    const tierRank: Record<Tier, number> = { HIGH: 0, MODERATE: 1, LOW: 2 };
    return [...this.state.patients.values()].sort((a, b) => {
      const ta = a.latest_tier ? tierRank[a.latest_tier] : 3;
      const tb = b.latest_tier ? tierRank[b.latest_tier] : 3;
      if (ta !== tb) return ta - tb;
      return (b.latest_scaled_score ?? 0) - (a.latest_scaled_score ?? 0);
    });
  }
}
