// Payload shapes mirroring the service's canonical JSON.

export type Tier = "LOW" | "MODERATE" | "HIGH";
export type Severity = "ADVISORY" | "URGENT" | "EMERGENCY";
export type AlertStateName = "OPEN" | "ACKED" | "RESOLVED";
export type CadenceName = "ROUTINE" | "DAILY_CHECKIN" | "CONTINUOUS_WATCH";

export interface Patient {
  patient_id: string;
  display_name: string;
  baseline: Record<string, number>;
  threshold_overrides: Record<string, number>;
  monitoring_cadence: CadenceName;
  abnormal_at_enrollment: boolean;
  latest_tier: Tier | null;
  latest_scaled_score: number | null;
}

export interface Assessment {
  patient_id: string;
  timestamp: number;
  raw_score: number;
  scaled_score: number;
  tier: Tier;
  components: Record<string, number>;
  stale: boolean;
}

export interface Alert {
  alert_id: string;
  patient_id: string;
  rule_id: string;
  severity: Severity;
  trigger_values: Record<string, unknown>;
  state: AlertStateName;
  created_at: number;
  acked_at: number | null;
  resolved_at: number | null;
  acked_by: string | null;
}

export interface TimeseriesPoint {
  timestamp: number;
  value: number;
}

export interface Timeseries {
  patient_id: string;
  metric: string;
  points: TimeseriesPoint[];
}

export interface Forecast {
  patient_id: string;
  metric: string;
  horizon: number;
  step_seconds: number;
  values: number[];
  breach: { metric: string; threshold: number; first_breach_step: number } | null;
}

export interface Thresholds {
  [field: string]: number;
}

export interface StreamPayloads {
  reading: Record<string, unknown>;
  assessment: Assessment;
  alert: { event: string; at: number; alert: Alert };
  link_state: { active_link: string; since: number };
}

export const SEVERITY_ORDER: Record<Severity, number> = {
  EMERGENCY: 0,
  URGENT: 1,
  ADVISORY: 2,
};
