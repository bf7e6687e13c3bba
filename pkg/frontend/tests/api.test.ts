import { describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";
import { MockServer } from "./fixtures.js";

describe("ApiClient", () => {
  it("fetches patients and alerts", async () => {
    const server = new MockServer();
    server.addPatient("p1");
    server.raiseAlert("p1", "R8_SPO2_LOW", "URGENT");
    const api = new ApiClient("", server.fetchFn);
    expect((await api.patients())[0].patient_id).toBe("p1");
    expect((await api.alerts())[0].rule_id).toBe("R8_SPO2_LOW");
  });

  it("ack round-trip returns the confirmed record", async () => {
    const server = new MockServer();
    server.addPatient("p1");
    const raised = server.raiseAlert("p1", "R3_CPK_CRITICAL", "EMERGENCY");
    const api = new ApiClient("", server.fetchFn);
    const acked = await api.ackAlert(raised.alert_id, "dr-kim");
    expect(acked.state).toBe("ACKED");
    expect(acked.acked_by).toBe("dr-kim");
  });

  it("surfaces ILLEGAL_TRANSITION verbatim", async () => {
    const server = new MockServer();
    server.addPatient("p1");
    const raised = server.raiseAlert("p1", "R8_SPO2_LOW", "URGENT");
    const api = new ApiClient("", server.fetchFn);
    await api.resolveAlert(raised.alert_id);
    const err = await api.ackAlert(raised.alert_id, "dr").catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect((err as ApiError).status).toBe(409);
    expect((err as ApiError).code).toBe("ILLEGAL_TRANSITION");
  });

  it("surfaces INVALID_OVERRIDE from the server", async () => {
    const server = new MockServer();
    server.addPatient("p1");
    const api = new ApiClient("", server.fetchFn);
    const err = await api
      .overrideThresholds("p1", { risk_moderate: 9 })
      .catch((e) => e);
    expect((err as ApiError).code).toBe("INVALID_OVERRIDE");
  });

  it("override returns effective merged thresholds, not just the override", async () => {
    const server = new MockServer();
    server.addPatient("p1");
    const api = new ApiClient("", server.fetchFn);
    const merged = await api.overrideThresholds("p1", { spo2_min_pct: 92 });
    expect(merged.spo2_min_pct).toBe(92);
    expect(merged.cpk_critical).toBe(1000); // defaults still visible
  });
});
