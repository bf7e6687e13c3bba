// In-memory stand-in for the monitoring service: implements the API
// semantics the console depends on (alert lifecycle, threshold merge
// rules, the event log behind /stream) so tests exercise real round-trips
// without a server.

import type { EventSourceLike } from "../src/stream.js";
import type { Alert, Patient } from "../src/types.js";

const THRESHOLD_DEFAULTS: Record<string, number> = {
  cpk_critical: 1000, cpk_delta_24h: 500, cpk_sustained: 200, sustained_hours: 24,
  alt_max: 140, ast_max: 100, emg_atrophy_mv: 0.5, hrv_min_ms: 20, hrv_urgent_ms: 10,
  spo2_min_pct: 90, hr_max_bpm: 120, temp_max_c: 30, humidity_max_pct: 70,
  activity_g: 1.3, sustained_activity_minutes: 30, risk_moderate: 3, risk_high: 6,
};

interface LogEntry {
  id: number;
  type: string;
  payload: unknown;
}

export class FakeEventSource implements EventSourceLike {
  onopen: ((ev: unknown) => void) | null = null;
  onerror: ((ev: unknown) => void) | null = null;
  closed = false;
  private handlers = new Map<string, ((ev: MessageEvent) => void)[]>();

  constructor(
    private server: MockServer,
    public lastEventId: number,
  ) {
    queueMicrotask(() => {
      if (this.closed) return;
      this.onopen?.({});
      this.server.replayTo(this);
    });
  }

  addEventListener(type: string, handler: (ev: MessageEvent) => void): void {
    const list = this.handlers.get(type) ?? [];
    list.push(handler);
    this.handlers.set(type, list);
  }

  dispatch(entry: LogEntry): void {
    if (this.closed) return;
    for (const handler of this.handlers.get(entry.type) ?? []) {
      handler({
        data: JSON.stringify(entry.payload),
        lastEventId: String(entry.id),
      } as MessageEvent);
    }
  }

  close(): void {
    this.closed = true;
    this.server.detach(this);
  }

  /** Test hook: simulate a dropped connection. */
  fail(): void {
    this.onerror?.({});
  }
}

export class MockServer {
  patients = new Map<string, Patient>();
  alerts = new Map<string, Alert>();
  overrides = new Map<string, Record<string, number>>();
  log: LogEntry[] = [];
  now = 1_000_000;
  private lsn = 0;
  private sources: FakeEventSource[] = [];
  private nextAlert = 1;

  addPatient(id: string, tier: Patient["latest_tier"] = "LOW"): Patient {
    const patient: Patient = {
      patient_id: id, display_name: id, baseline: {}, threshold_overrides: {},
      monitoring_cadence: "ROUTINE", abnormal_at_enrollment: false,
      latest_tier: tier, latest_scaled_score: tier === "LOW" ? 2.0 : 7.0,
    };
    this.patients.set(id, patient);
    return patient;
  }

  private emit(type: string, payload: unknown): LogEntry {
    const entry = { id: ++this.lsn, type, payload };
    this.log.push(entry);
    for (const source of this.sources) source.dispatch(entry);
    return entry;
  }

  raiseAlert(patientId: string, ruleId: string, severity: Alert["severity"]): Alert {
    const alert: Alert = {
      alert_id: `${patientId}-${this.nextAlert++}`,
      patient_id: patientId, rule_id: ruleId, severity,
      trigger_values: { value: 1 }, state: "OPEN",
      created_at: (this.now += 1000), acked_at: null, resolved_at: null, acked_by: null,
    };
    this.alerts.set(alert.alert_id, alert);
    this.emit("alert", { event: "created", at: alert.created_at, alert });
    return alert;
  }

  publishAssessment(patientId: string, tier: Patient["latest_tier"], scaled: number): void {
    const assessment = {
      patient_id: patientId, timestamp: (this.now += 1000),
      raw_score: scaled / 10, scaled_score: scaled, tier,
      components: { CPK_TERM: scaled / 20, ALT_TERM: scaled / 40,
                    AST_TERM: scaled / 40, EMG_TERM: scaled / 20 },
      stale: false,
    };
    this.emit("assessment", assessment);
  }

  // -- /stream ------------------------------------------------------------

  createEventSource = (url: string): FakeEventSource => {
    const match = /last_event_id=(\d+)/.exec(url);
    const source = new FakeEventSource(this, match ? Number(match[1]) : 0);
    this.sources.push(source);
    return source;
  };

  replayTo(source: FakeEventSource): void {
    for (const entry of this.log) {
      if (entry.id > source.lastEventId) source.dispatch(entry);
    }
  }

  detach(source: FakeEventSource): void {
    this.sources = this.sources.filter((s) => s !== source);
  }

  dropConnections(): void {
    for (const source of [...this.sources]) {
      source.close();
      source.fail();
    }
  }

  // -- fetch routing --------------------------------------------------------

  fetchFn = async (url: string, init?: RequestInit): Promise<Response> => {
    const method = init?.method ?? "GET";
    const body = init?.body ? JSON.parse(String(init.body)) : null;
    const path = url.split("?")[0];
    const respond = (status: number, payload: unknown) =>
      ({
        ok: status >= 200 && status < 300,
        status,
        json: async () => payload,
      }) as Response;

    if (method === "GET" && path === "/patients") {
      return respond(200, [...this.patients.values()]);
    }
    if (method === "GET" && path === "/alerts") {
      return respond(200, [...this.alerts.values()]);
    }
    let match = /^\/alerts\/([^/]+)\/ack$/.exec(path);
    if (method === "POST" && match) {
      const alert = this.alerts.get(match[1]);
      if (!alert) return respond(404, { error: "UNKNOWN_ALERT", detail: match[1] });
      if (alert.state !== "OPEN") {
        return respond(409, {
          error: "ILLEGAL_TRANSITION",
          detail: `cannot ack alert in state ${alert.state}`,
        });
      }
      const updated: Alert = {
        ...alert, state: "ACKED", acked_at: (this.now += 1000), acked_by: body.by,
      };
      this.alerts.set(updated.alert_id, updated);
      this.emit("alert", { event: "acked", at: updated.acked_at, alert: updated });
      return respond(200, updated);
    }
    match = /^\/alerts\/([^/]+)\/resolve$/.exec(path);
    if (method === "POST" && match) {
      const alert = this.alerts.get(match[1]);
      if (!alert) return respond(404, { error: "UNKNOWN_ALERT", detail: match[1] });
      if (alert.state === "RESOLVED") {
        return respond(409, { error: "ILLEGAL_TRANSITION", detail: "already resolved" });
      }
      const updated: Alert = { ...alert, state: "RESOLVED", resolved_at: (this.now += 1000) };
      this.alerts.set(updated.alert_id, updated);
      this.emit("alert", { event: "resolved", at: updated.resolved_at!, alert: updated });
      return respond(200, updated);
    }
    match = /^\/patients\/([^/]+)\/thresholds$/.exec(path);
    if (method === "PUT" && match) {
      const existing = this.overrides.get(match[1]) ?? {};
      const merged = { ...THRESHOLD_DEFAULTS, ...existing, ...body };
      if (!(merged.risk_moderate < merged.risk_high)) {
        return respond(400, {
          error: "INVALID_OVERRIDE",
          detail: "risk tiers must satisfy moderate < high",
        });
      }
      this.overrides.set(match[1], { ...existing, ...body });
      return respond(200, merged);
    }
    match = /^\/patients\/([^/]+)\/cadence$/.exec(path);
    if (method === "PUT" && match) {
      const patient = this.patients.get(match[1]);
      if (!patient) return respond(404, { error: "UNKNOWN_PATIENT", detail: match[1] });
      patient.monitoring_cadence = body.cadence;
      return respond(200, patient);
    }
    match = /^\/patients\/([^/]+)\/timeseries$/.exec(path);
    if (method === "GET" && match) {
      return respond(200, {
        patient_id: match[1], metric: "CPK",
        points: [{ timestamp: 0, value: 120 }, { timestamp: 3600_000, value: 150 }],
      });
    }
    return respond(404, { error: "NOT_FOUND", detail: path });
  };
}

export function flush(): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, 0));
}
