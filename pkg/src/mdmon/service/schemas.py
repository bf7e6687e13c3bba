"""Pydantic request/response models for the operator API."""

from __future__ import annotations

from typing import Any, Optional

from pydantic import BaseModel, ConfigDict, Field


class AckOut(BaseModel):
    ack: str


class PatientOut(BaseModel):
    patient_id: str
    display_name: str
    baseline: dict[str, float]
    threshold_overrides: dict[str, float]
    monitoring_cadence: str
    abnormal_at_enrollment: bool
    latest_tier: Optional[str] = None
    latest_scaled_score: Optional[float] = None


class TimeseriesPoint(BaseModel):
    timestamp: int
    value: float


class TimeseriesOut(BaseModel):
    patient_id: str
    metric: str
    points: list[TimeseriesPoint]


class RiskOut(BaseModel):
    patient_id: str
    timestamp: int
    raw_score: float
    scaled_score: float
    tier: str
    components: dict[str, float]
    stale: bool


class BreachOut(BaseModel):
    metric: str
    threshold: float
    first_breach_step: int


class ForecastOut(BaseModel):
    patient_id: str
    metric: str
    horizon: int
    step_seconds: float
    values: list[float]
    breach: Optional[BreachOut] = None


class AlertOut(BaseModel):
    alert_id: str
    patient_id: str
    rule_id: str
    severity: str
    trigger_values: dict[str, Any]
    state: str
    created_at: int
    acked_at: Optional[int] = None
    resolved_at: Optional[int] = None
    acked_by: Optional[str] = None


class AckAlertIn(BaseModel):
    by: str = Field(min_length=1)


class CadenceIn(BaseModel):
    cadence: str


class ThresholdOverridesIn(BaseModel):
    """Partial threshold override; omitted fields keep their defaults."""

    model_config = ConfigDict(extra="forbid")

    cpk_critical: Optional[float] = None
    cpk_delta_24h: Optional[float] = None
    cpk_sustained: Optional[float] = None
    sustained_hours: Optional[float] = None
    alt_max: Optional[float] = None
    ast_max: Optional[float] = None
    emg_atrophy_mv: Optional[float] = None
    hrv_min_ms: Optional[float] = None
    hrv_urgent_ms: Optional[float] = None
    spo2_min_pct: Optional[float] = None
    hr_max_bpm: Optional[float] = None
    temp_max_c: Optional[float] = None
    humidity_max_pct: Optional[float] = None
    activity_g: Optional[float] = None
    sustained_activity_minutes: Optional[float] = None
    risk_moderate: Optional[float] = None
    risk_high: Optional[float] = None

    def overrides(self) -> dict[str, float | None]:
        """Explicitly sent fields only; a null value clears that override."""
        return {k: v for k, v in self.model_dump().items() if k in self.model_fields_set}


class ThresholdsOut(BaseModel):
    """Effective (merged) thresholds for a patient."""

    cpk_critical: float
    cpk_delta_24h: float
    cpk_sustained: float
    sustained_hours: float
    alt_max: float
    ast_max: float
    emg_atrophy_mv: float
    hrv_min_ms: float
    hrv_urgent_ms: float
    spo2_min_pct: float
    hr_max_bpm: float
    temp_max_c: float
    humidity_max_pct: float
    activity_g: float
    sustained_activity_minutes: float
    risk_moderate: float
    risk_high: float


class ErrorOut(BaseModel):
    error: str
    detail: str = ""
