// Thin typed client over the operator API. Every mutation returns the
// server's confirmed record; callers must not update state before that.

import type { Alert, Forecast, Patient, Thresholds, Timeseries } from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    public detail: string,
  ) {
    super(detail ? `${code}: ${detail}` : code);
  }
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private base: string = "",
    private fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(this.base + path, init);
    const body = await response.json().catch(() => ({}));
    if (!response.ok) {
      throw new ApiError(
        response.status,
        (body as { error?: string }).error ?? `HTTP_${response.status}`,
        (body as { detail?: string }).detail ?? "",
      );
    }
    return body as T;
  }

  patients(): Promise<Patient[]> {
    return this.request("/patients");
  }

  alerts(state?: string): Promise<Alert[]> {
    const suffix = state ? `?state=${encodeURIComponent(state)}` : "";
    return this.request(`/alerts${suffix}`);
  }

  timeseries(patientId: string, metric: string, from?: number, to?: number): Promise<Timeseries> {
    const params = new URLSearchParams({ metric });
    if (from !== undefined) params.set("from", String(from));
    if (to !== undefined) params.set("to", String(to));
    return this.request(
      `/patients/${encodeURIComponent(patientId)}/timeseries?${params.toString()}`,
    );
  }

  forecast(patientId: string, metric = "CPK", horizon = 14): Promise<Forecast> {
    return this.request(
      `/patients/${encodeURIComponent(patientId)}/forecast?metric=${metric}&horizon=${horizon}`,
    );
  }

  ackAlert(alertId: string, by: string): Promise<Alert> {
    return this.request(`/alerts/${encodeURIComponent(alertId)}/ack`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ by }),
    });
  }

  resolveAlert(alertId: string): Promise<Alert> {
    return this.request(`/alerts/${encodeURIComponent(alertId)}/resolve`, {
      method: "POST",
    });
  }

  overrideThresholds(patientId: string, overrides: Record<string, number>): Promise<Thresholds> {
    return this.request(`/patients/${encodeURIComponent(patientId)}/thresholds`, {
      method: "PUT",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(overrides),
    });
  }

  setCadence(patientId: string, cadence: string): Promise<Patient> {
    return this.request(`/patients/${encodeURIComponent(patientId)}/cadence`, {
      method: "PUT",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ cadence }),
    });
  }
}
