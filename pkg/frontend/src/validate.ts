// Client-side mirror of the server's threshold rules, so the override
// form can reject bad values before the round-trip. The server remains
// the authority; these checks only pre-empt the obvious cases.

export const THRESHOLD_FIELDS = [
  "cpk_critical",
  "cpk_delta_24h",
  "cpk_sustained",
  "sustained_hours",
  "alt_max",
  "ast_max",
  "emg_atrophy_mv",
  "hrv_min_ms",
  "hrv_urgent_ms",
  "spo2_min_pct",
  "hr_max_bpm",
  "temp_max_c",
  "humidity_max_pct",
  "activity_g",
  "sustained_activity_minutes",
  "risk_moderate",
  "risk_high",
] as const;

export type ThresholdField = (typeof THRESHOLD_FIELDS)[number];

const DEFAULTS: Record<ThresholdField, number> = {
  cpk_critical: 1000,
  cpk_delta_24h: 500,
  cpk_sustained: 200,
  sustained_hours: 24,
  alt_max: 140,
  ast_max: 100,
  emg_atrophy_mv: 0.5,
  hrv_min_ms: 20,
  hrv_urgent_ms: 10,
  spo2_min_pct: 90,
  hr_max_bpm: 120,
  temp_max_c: 30,
  humidity_max_pct: 70,
  activity_g: 1.3,
  sustained_activity_minutes: 30,
  risk_moderate: 3,
  risk_high: 6,
};

export function defaultThresholds(): Record<ThresholdField, number> {
  return { ...DEFAULTS };
}

/** Returns the violated rule, or null when the override set is acceptable. */
export function validateOverrides(overrides: Record<string, number>): string | null {
  for (const [field, value] of Object.entries(overrides)) {
    if (!(THRESHOLD_FIELDS as readonly string[]).includes(field)) {
      return `unknown threshold field '${field}'`;
    }
    if (!Number.isFinite(value)) {
      return `${field} must be a number`;
    }
    if (value <= 0) {
      return `${field} must be positive`;
    }
  }
  const merged = { ...DEFAULTS, ...overrides };
  if (!(merged.risk_moderate < merged.risk_high)) {
    return "risk_moderate must stay below risk_high";
  }
  if (merged.risk_high > 10) {
    return "risk_high cannot exceed 10";
  }
  if (!(merged.cpk_sustained < merged.cpk_critical)) {
    return "cpk_sustained must stay below cpk_critical";
  }
  return null;
}
