"""Canonical domain model shared by every pipeline stage.

All values live in one canonical unit per metric (U/L, mV, bpm, ms, %,
degrees C, g, deg/s); unit conversion is the simulator's problem. Every
type here is an immutable value object with a stable JSON encoding:
snake_case field names, integer epoch-millisecond timestamps, enums as
their string names.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from typing import Any, Mapping


class MetricKind(str, Enum):
    CPK = "CPK"                    # U/L
    ALT = "ALT"                    # U/L
    AST = "AST"                    # U/L
    EMG_AMPLITUDE = "EMG_AMPLITUDE"  # mV (RMS amplitude)
    EMG_WAVEFORM = "EMG_WAVEFORM"    # mV samples at a fixed rate
    HEART_RATE = "HEART_RATE"      # bpm
    HRV = "HRV"                    # ms
    SPO2 = "SPO2"                  # %
    RESP_RATE = "RESP_RATE"        # breaths/min
    TEMPERATURE = "TEMPERATURE"    # degrees C (ambient)
    HUMIDITY = "HUMIDITY"          # %
    ACCEL = "ACCEL"                # g, 3-axis
    GYRO = "GYRO"                  # deg/s, 3-axis

    @property
    def unit(self) -> str:
        return _UNITS[self]

    @property
    def axes(self) -> int | None:
        """Fixed vector length, or None for config-sized waveforms."""
        if self is MetricKind.EMG_WAVEFORM:
            return None
        if self in (MetricKind.ACCEL, MetricKind.GYRO):
            return 3
        return 1


_UNITS = {
    MetricKind.CPK: "U/L",
    MetricKind.ALT: "U/L",
    MetricKind.AST: "U/L",
    MetricKind.EMG_AMPLITUDE: "mV",
    MetricKind.EMG_WAVEFORM: "mV",
    MetricKind.HEART_RATE: "bpm",
    MetricKind.HRV: "ms",
    MetricKind.SPO2: "%",
    MetricKind.RESP_RATE: "breaths/min",
    MetricKind.TEMPERATURE: "degC",
    MetricKind.HUMIDITY: "%",
    MetricKind.ACCEL: "g",
    MetricKind.GYRO: "deg/s",
}

# Physically possible per-sample bounds: (lo, hi, lo_exclusive, hi_exclusive).
# Values outside these are rejected at validation, never clamped.
_RANGES: dict[MetricKind, tuple[float, float, bool, bool]] = {
    MetricKind.CPK: (0.0, 50_000.0, False, False),
    MetricKind.ALT: (0.0, 5_000.0, False, False),
    MetricKind.AST: (0.0, 5_000.0, False, False),
    MetricKind.EMG_AMPLITUDE: (0.0, 20.0, False, False),
    MetricKind.EMG_WAVEFORM: (-20.0, 20.0, False, False),
    MetricKind.HEART_RATE: (0.0, 300.0, True, True),
    MetricKind.HRV: (0.0, 1_000.0, False, False),
    MetricKind.SPO2: (0.0, 100.0, False, False),
    MetricKind.RESP_RATE: (0.0, 120.0, True, False),
    MetricKind.TEMPERATURE: (-40.0, 60.0, False, False),
    MetricKind.HUMIDITY: (0.0, 100.0, False, False),
    MetricKind.ACCEL: (-16.0, 16.0, False, False),
    MetricKind.GYRO: (-2_000.0, 2_000.0, False, False),
}


class Quality(str, Enum):
    OK = "OK"
    SUSPECT = "SUSPECT"
    MISSING = "MISSING"


class Tier(str, Enum):
    LOW = "LOW"
    MODERATE = "MODERATE"
    HIGH = "HIGH"


class Severity(str, Enum):
    ADVISORY = "ADVISORY"
    URGENT = "URGENT"
    EMERGENCY = "EMERGENCY"


_SEVERITY_ORDER = {Severity.ADVISORY: 0, Severity.URGENT: 1, Severity.EMERGENCY: 2}


def severity_rank(s: Severity) -> int:
    return _SEVERITY_ORDER[s]


class AlertState(str, Enum):
    OPEN = "OPEN"
    ACKED = "ACKED"
    RESOLVED = "RESOLVED"


class Cadence(str, Enum):
    ROUTINE = "ROUTINE"
    DAILY_CHECKIN = "DAILY_CHECKIN"
    CONTINUOUS_WATCH = "CONTINUOUS_WATCH"


_CADENCE_ORDER = {Cadence.ROUTINE: 0, Cadence.DAILY_CHECKIN: 1, Cadence.CONTINUOUS_WATCH: 2}


def cadence_rank(c: Cadence) -> int:
    return _CADENCE_ORDER[c]


# --------------------------------------------------------------------------
# errors
# --------------------------------------------------------------------------

class DomainError(ValueError):
    """Base for rule-named rejections; `code` is a stable machine-readable id."""

    code = "DOMAIN_ERROR"

    def __init__(self, message: str, code: str | None = None):
        super().__init__(message)
        if code is not None:
            self.code = code


class ReadingRejected(DomainError):
    code = "REJECTED"


OUT_OF_RANGE = "OUT_OF_RANGE"
BAD_SHAPE = "BAD_SHAPE"
STALE_SEQ = "STALE_SEQ"


class InvalidOverride(DomainError):
    code = "INVALID_OVERRIDE"


class IllegalTransition(DomainError):
    code = "ILLEGAL_TRANSITION"


# --------------------------------------------------------------------------
# readings
# --------------------------------------------------------------------------

Value = float | tuple[float, ...] | None


@dataclass(frozen=True)
class SensorReading:
    """One timestamped, sequenced measurement (or waveform window).

    `value` is a float for scalar metrics, a tuple for vector metrics
    (3-axis ACCEL/GYRO, EMG windows), and None only when quality is
    MISSING. `seq` strictly increases per device.
    """

    patient_id: str
    device_id: str
    metric: MetricKind
    value: Value
    timestamp: int          # ms since epoch, logical clock
    seq: int
    quality: Quality = Quality.OK

    def magnitude(self) -> float:
        """Euclidean magnitude for 3-axis vectors, identity for scalars."""
        if isinstance(self.value, tuple):
            return sum(v * v for v in self.value) ** 0.5
        if self.value is None:
            raise ValueError("reading has no value")
        return self.value


def check_reading(reading: SensorReading, window_samples: int = 1024) -> SensorReading:
    """Stateless shape and range validation; returns the reading unchanged.

    Raises ReadingRejected with code OUT_OF_RANGE or BAD_SHAPE. Sequence
    monotonicity needs per-device state: see ReadingValidator.
    """
    metric = reading.metric
    if reading.quality is Quality.MISSING:
        if reading.value is not None:
            raise ReadingRejected("MISSING reading must carry no value", BAD_SHAPE)
        return reading
    value = reading.value
    expected = metric.axes if metric.axes is not None else window_samples
    if expected == 1:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ReadingRejected(f"{metric.value} expects a scalar value", BAD_SHAPE)
        samples: tuple[float, ...] = (float(value),)
    else:
        if not isinstance(value, tuple):
            raise ReadingRejected(f"{metric.value} expects a vector value", BAD_SHAPE)
        if len(value) != expected:
            raise ReadingRejected(
                f"{metric.value} expects {expected} samples, got {len(value)}", BAD_SHAPE
            )
        samples = value
    lo, hi, lo_ex, hi_ex = _RANGES[metric]
    for v in samples:
        bad_lo = v <= lo if lo_ex else v < lo
        bad_hi = v >= hi if hi_ex else v > hi
        if bad_lo or bad_hi or v != v:  # NaN fails both comparisons' intent
            raise ReadingRejected(
                f"{metric.value} value {v} outside physical range "
                f"{'(' if lo_ex else '['}{lo}, {hi}{')' if hi_ex else ']'}",
                OUT_OF_RANGE,
            )
    return reading


class ReadingValidator:
    """Stateful validator: range + shape checks plus per-device seq monotonicity.

    Accepted readings advance the per-device watermark; rejected ones do not.
    """

    def __init__(self, window_samples: int = 1024):
        self.window_samples = window_samples
        self._last_seq: dict[str, int] = {}

    def validate(self, reading: SensorReading) -> SensorReading:
        check_reading(reading, self.window_samples)
        last = self._last_seq.get(reading.device_id)
        if last is not None and reading.seq <= last:
            raise ReadingRejected(
                f"seq {reading.seq} not after last seen {last} for {reading.device_id}",
                STALE_SEQ,
            )
        self._last_seq[reading.device_id] = reading.seq
        return reading


# --------------------------------------------------------------------------
# thresholds
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ThresholdSet:
    """Alert thresholds; defaults are the published clinical trigger values."""

    cpk_critical: float = 1000.0       # U/L, latest sample
    cpk_delta_24h: float = 500.0       # U/L rise within 24 h
    cpk_sustained: float = 200.0       # U/L held for sustained_hours
    sustained_hours: float = 24.0
    alt_max: float = 140.0             # U/L
    ast_max: float = 100.0             # U/L
    emg_atrophy_mv: float = 0.5        # mV, 5-min rolling mean RMS
    hrv_min_ms: float = 20.0           # ms RMSSD
    hrv_urgent_ms: float = 10.0        # ms; below this the HRV rule escalates
    spo2_min_pct: float = 90.0         # %
    hr_max_bpm: float = 120.0          # bpm
    temp_max_c: float = 30.0           # degrees C ambient
    humidity_max_pct: float = 70.0     # %
    activity_g: float = 1.3            # sustained-exertion magnitude floor
    sustained_activity_minutes: float = 30.0
    risk_moderate: float = 3.0         # scaled score, strict >
    risk_high: float = 6.0

    def validate(self) -> "ThresholdSet":
        if not (0 < self.risk_moderate < self.risk_high <= 10):
            raise InvalidOverride(
                f"risk tiers must satisfy 0 < moderate < high <= 10, got "
                f"{self.risk_moderate}/{self.risk_high}"
            )
        for f in fields(self):
            v = getattr(self, f.name)
            if v <= 0:
                raise InvalidOverride(f"threshold {f.name} must be positive, got {v}")
        if self.cpk_sustained >= self.cpk_critical:
            raise InvalidOverride(
                f"cpk_sustained {self.cpk_sustained} must be below cpk_critical "
                f"{self.cpk_critical}"
            )
        return self

    def merged(self, overrides: Mapping[str, float]) -> "ThresholdSet":
        known = {f.name for f in fields(self)}
        for name in overrides:
            if name not in known:
                raise InvalidOverride(f"unknown threshold field {name!r}")
        return replace(self, **{k: float(v) for k, v in overrides.items()}).validate()


def default_thresholds() -> ThresholdSet:
    return ThresholdSet()


# --------------------------------------------------------------------------
# patients
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PatientProfile:
    patient_id: str
    display_name: str = ""
    baseline: Mapping[str, float] = field(default_factory=dict)  # MetricKind name -> value
    threshold_overrides: Mapping[str, float] = field(default_factory=dict)
    monitoring_cadence: Cadence = Cadence.ROUTINE
    abnormal_at_enrollment: bool = False

    def validate(self) -> "PatientProfile":
        cpk = self.baseline.get(MetricKind.CPK.value)
        if cpk is not None and not self.abnormal_at_enrollment and not (20.0 <= cpk <= 200.0):
            raise DomainError(
                f"baseline CPK {cpk} outside normal band [20, 200] U/L; "
                "flag abnormal_at_enrollment to enroll anyway",
                "ABNORMAL_BASELINE",
            )
        return self


def effective_thresholds(profile: PatientProfile, defaults: ThresholdSet) -> ThresholdSet:
    """Field-wise merge; override wins; result must satisfy all invariants."""
    return defaults.merged(profile.threshold_overrides)


# --------------------------------------------------------------------------
# assessments and alerts
# --------------------------------------------------------------------------

CPK_TERM = "CPK_TERM"
ALT_TERM = "ALT_TERM"
AST_TERM = "AST_TERM"
EMG_TERM = "EMG_TERM"


@dataclass(frozen=True)
class RiskAssessment:
    patient_id: str
    timestamp: int
    raw_score: float
    scaled_score: float
    tier: Tier
    components: Mapping[str, float]
    stale: bool = False


@dataclass(frozen=True)
class Alert:
    alert_id: str
    patient_id: str
    rule_id: str
    severity: Severity
    trigger_values: Mapping[str, Any]
    state: AlertState = AlertState.OPEN
    created_at: int = 0
    acked_at: int | None = None
    resolved_at: int | None = None
    acked_by: str | None = None

    def acked(self, by: str, at: int) -> "Alert":
        if self.state is not AlertState.OPEN:
            raise IllegalTransition(f"cannot ack alert in state {self.state.value}")
        if at < self.created_at:
            raise IllegalTransition("ack timestamp precedes creation")
        return replace(self, state=AlertState.ACKED, acked_at=at, acked_by=by)

    def resolved(self, at: int) -> "Alert":
        if self.state is AlertState.RESOLVED:
            raise IllegalTransition("alert already resolved")
        floor = self.acked_at if self.acked_at is not None else self.created_at
        if at < floor:
            raise IllegalTransition("resolve timestamp precedes prior transition")
        return replace(self, state=AlertState.RESOLVED, resolved_at=at)


# --------------------------------------------------------------------------
# derived records produced past the gateway
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class EmgFeatureRecord:
    """Gateway-side EMG window summary; raw window kept only on a spike."""

    patient_id: str
    device_id: str
    seq: int
    timestamp: int
    rms_mv: float
    dominant_hz: float
    band_power_ratio: float
    spike_flag: bool
    raw_mv: tuple[float, ...] | None = None


@dataclass(frozen=True)
class FallRecord:
    patient_id: str
    device_id: str
    timestamp: int          # impact time
    free_fall_ms: float
    impact_g: float
    orientation_change_deg: float


# --------------------------------------------------------------------------
# canonical JSON encoding
# --------------------------------------------------------------------------

def canonical_json(record: Mapping[str, Any]) -> str:
    """Stable byte-for-byte encoding used on the wire and in stored logs."""
    return json.dumps(record, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _plain(v: Any) -> Any:
    if isinstance(v, Enum):
        return v.value
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    if isinstance(v, Mapping):
        return {k: _plain(x) for k, x in v.items()}
    return v


def to_record(obj: Any) -> dict[str, Any]:
    """Encode any model dataclass as its canonical JSON-safe dict."""
    out = {}
    for f in fields(obj):
        out[f.name] = _plain(getattr(obj, f.name))
    return out


def reading_from_record(d: Mapping[str, Any]) -> SensorReading:
    value = d["value"]
    if isinstance(value, list):
        value = tuple(float(v) for v in value)
    elif value is not None:
        value = float(value)
    return SensorReading(
        patient_id=d["patient_id"],
        device_id=d["device_id"],
        metric=MetricKind(d["metric"]),
        value=value,
        timestamp=int(d["timestamp"]),
        seq=int(d["seq"]),
        quality=Quality(d.get("quality", "OK")),
    )


def thresholds_from_record(d: Mapping[str, Any]) -> ThresholdSet:
    return ThresholdSet(**{k: float(v) for k, v in d.items()})


def profile_from_record(d: Mapping[str, Any]) -> PatientProfile:
    return PatientProfile(
        patient_id=d["patient_id"],
        display_name=d.get("display_name", ""),
        baseline={k: float(v) for k, v in d.get("baseline", {}).items()},
        threshold_overrides={k: float(v) for k, v in d.get("threshold_overrides", {}).items()},
        monitoring_cadence=Cadence(d.get("monitoring_cadence", "ROUTINE")),
        abnormal_at_enrollment=bool(d.get("abnormal_at_enrollment", False)),
    )


def assessment_from_record(d: Mapping[str, Any]) -> RiskAssessment:
    return RiskAssessment(
        patient_id=d["patient_id"],
        timestamp=int(d["timestamp"]),
        raw_score=float(d["raw_score"]),
        scaled_score=float(d["scaled_score"]),
        tier=Tier(d["tier"]),
        components={k: float(v) for k, v in d["components"].items()},
        stale=bool(d.get("stale", False)),
    )


def alert_from_record(d: Mapping[str, Any]) -> Alert:
    return Alert(
        alert_id=d["alert_id"],
        patient_id=d["patient_id"],
        rule_id=d["rule_id"],
        severity=Severity(d["severity"]),
        trigger_values=dict(d["trigger_values"]),
        state=AlertState(d.get("state", "OPEN")),
        created_at=int(d["created_at"]),
        acked_at=None if d.get("acked_at") is None else int(d["acked_at"]),
        resolved_at=None if d.get("resolved_at") is None else int(d["resolved_at"]),
        acked_by=d.get("acked_by"),
    )


def feature_from_record(d: Mapping[str, Any]) -> EmgFeatureRecord:
    raw = d.get("raw_mv")
    return EmgFeatureRecord(
        patient_id=d["patient_id"],
        device_id=d["device_id"],
        seq=int(d["seq"]),
        timestamp=int(d["timestamp"]),
        rms_mv=float(d["rms_mv"]),
        dominant_hz=float(d["dominant_hz"]),
        band_power_ratio=float(d["band_power_ratio"]),
        spike_flag=bool(d["spike_flag"]),
        raw_mv=None if raw is None else tuple(float(v) for v in raw),
    )


def fall_from_record(d: Mapping[str, Any]) -> FallRecord:
    return FallRecord(
        patient_id=d["patient_id"],
        device_id=d["device_id"],
        timestamp=int(d["timestamp"]),
        free_fall_ms=float(d["free_fall_ms"]),
        impact_g=float(d["impact_g"]),
        orientation_change_deg=float(d["orientation_change_deg"]),
    )
