import { describe, expect, it } from "vitest";

import { Store } from "../src/state.js";
import type { Alert, Assessment, Patient } from "../src/types.js";

function patient(id: string): Patient {
  return {
    patient_id: id, display_name: id, baseline: {}, threshold_overrides: {},
    monitoring_cadence: "ROUTINE", abnormal_at_enrollment: false,
    latest_tier: null, latest_scaled_score: null,
  };
}

function alert(id: string, severity: Alert["severity"], state: Alert["state"] = "OPEN",
               createdAt = 0): Alert {
  return {
    alert_id: id, patient_id: "p1", rule_id: "R8_SPO2_LOW", severity,
    trigger_values: {}, state, created_at: createdAt,
    acked_at: null, resolved_at: null, acked_by: null,
  };
}

describe("Store", () => {
  it("assessment events drive the rendered tier", () => {
    const store = new Store();
    store.loadPatients([patient("p1")]);
    const assessment: Assessment = {
      patient_id: "p1", timestamp: 10, raw_score: 0.47, scaled_score: 4.7,
      tier: "MODERATE", components: { CPK_TERM: 0.25 }, stale: false,
    };
    store.applyStreamEvent(5, "assessment", assessment);
    expect(store.state.patients.get("p1")!.latest_tier).toBe("MODERATE");
    expect(store.state.latest.get("p1")!.scaled_score).toBe(4.7);
    expect(store.state.lastEventId).toBe(5);
  });

  it("alert queue sorts active first, then severity, then newest", () => {
    const store = new Store();
    store.loadAlerts([
      alert("a-adv", "ADVISORY", "OPEN", 30),
      alert("a-res", "EMERGENCY", "RESOLVED", 40),
      alert("a-urg", "URGENT", "OPEN", 20),
      alert("a-emg", "EMERGENCY", "OPEN", 10),
    ]);
    const ids = store.alertQueue().map((a) => a.alert_id);
    expect(ids).toEqual(["a-emg", "a-urg", "a-adv", "a-res"]);
  });

  it("board sorts worst tier first", () => {
    const store = new Store();
    const low = { ...patient("p-low"), latest_tier: "LOW" as const, latest_scaled_score: 2 };
    const high = { ...patient("p-high"), latest_tier: "HIGH" as const, latest_scaled_score: 8 };
    const unknown = patient("p-new");
    store.loadPatients([low, unknown, high]);
    expect(store.board().map((p) => p.patient_id)).toEqual(["p-high", "p-low", "p-new"]);
  });

  it("lastEventId never moves backwards", () => {
    const store = new Store();
    store.applyStreamEvent(9, "reading", {});
    store.applyStreamEvent(4, "reading", {});
    expect(store.state.lastEventId).toBe(9);
  });

  it("upsertAlert replaces the record only on server confirmation", () => {
    const store = new Store();
    const open = alert("a1", "URGENT");
    store.loadAlerts([open]);
    store.upsertAlert({ ...open, state: "ACKED", acked_by: "dr" });
    expect(store.state.alerts.get("a1")!.state).toBe("ACKED");
  });
});
