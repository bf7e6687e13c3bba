"""Clinical decision core: the weighted risk score, the rule catalog,
alert lifecycle with cooldowns, and cadence escalation.

The composite score weights CPK most heavily (it is the most sensitive
muscle-damage marker), splits the remainder across the transaminases,
and adds a small EMG-amplitude term:

    raw = 0.5*(CPK/1000) + 0.25*(ALT/100) + 0.25*(AST/100) + 0.1*EMG_rms

scaled = min(10, raw*10); tiers cut strictly above the moderate and high
thresholds. The EMG term follows the formula as written (higher amplitude,
higher score); the atrophy direction (low amplitude is pathological) is
enforced by rule R6 instead.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

from . import dsp
from .model import (
    ALT_TERM,
    AST_TERM,
    CPK_TERM,
    EMG_TERM,
    Alert,
    AlertState,
    Cadence,
    FallRecord,
    PatientProfile,
    RiskAssessment,
    Severity,
    ThresholdSet,
    Tier,
    cadence_rank,
    severity_rank,
)

HOUR_MS = 3_600_000
MINUTE_MS = 60_000

STALE_AFTER_MS = 48 * HOUR_MS      # older biomarkers flag the assessment STALE
FALL_RECENT_MS = 5 * MINUTE_MS     # how long a fall keeps R12 firing


class MissingInput(ValueError):
    code = "MISSING_INPUT"


@dataclass(frozen=True)
class RiskInputs:
    """Latest observed values per scored metric, with per-field age."""

    cpk: float
    alt: float
    ast: float
    emg_rms: float
    as_of: int
    staleness_ms: Mapping[str, int] = field(default_factory=dict)

    def validate(self) -> "RiskInputs":
        for name in ("cpk", "alt", "ast", "emg_rms"):
            v = getattr(self, name)
            if v is None:
                raise MissingInput(f"{name} never observed")
            if v < 0:
                raise ValueError(f"{name} must be non-negative")
        return self


def compute_risk(
    inputs: RiskInputs, thresholds: ThresholdSet, patient_id: str = ""
) -> RiskAssessment:
    inputs.validate()
    components = {
        CPK_TERM: 0.5 * (inputs.cpk / 1000.0),
        ALT_TERM: 0.25 * (inputs.alt / 100.0),
        AST_TERM: 0.25 * (inputs.ast / 100.0),
        EMG_TERM: 0.1 * inputs.emg_rms,
    }
    raw = components[CPK_TERM] + components[ALT_TERM] + components[AST_TERM] + components[EMG_TERM]
    scaled = min(10.0, raw * 10.0)
    stale = any(age > STALE_AFTER_MS for age in inputs.staleness_ms.values())
    return RiskAssessment(
        patient_id=patient_id, timestamp=inputs.as_of, raw_score=raw, scaled_score=scaled,
        tier=tier_for(scaled, thresholds), components=components, stale=stale,
    )


def tier_for(scaled_score: float, thresholds: ThresholdSet) -> Tier:
    if scaled_score > thresholds.risk_high:
        return Tier.HIGH
    if scaled_score > thresholds.risk_moderate:
        return Tier.MODERATE
    return Tier.LOW


# --------------------------------------------------------------------------
# rule catalog
# --------------------------------------------------------------------------

RULE_SEVERITY = {
    "R1_CPK_DELTA_24H": Severity.EMERGENCY,
    "R2_CPK_SUSTAINED": Severity.EMERGENCY,
    "R3_CPK_CRITICAL": Severity.EMERGENCY,
    "R4_ALT_HIGH": Severity.URGENT,
    "R5_AST_HIGH": Severity.URGENT,
    "R6_EMG_ATROPHY": Severity.URGENT,
    "R7_HRV_LOW": Severity.ADVISORY,
    "R8_SPO2_LOW": Severity.URGENT,
    "R9_HR_HIGH": Severity.URGENT,
    "R10_HEAT_HUMIDITY": Severity.ADVISORY,
    "R11_SUSTAINED_EXERTION": Severity.ADVISORY,
    "R12_FALL": Severity.EMERGENCY,
}

NOT_EVALUATED = "NOT_EVALUATED"

Sample = tuple[int, float]  # (timestamp_ms, value)


@dataclass(frozen=True)
class RuleFiring:
    rule_id: str
    severity: Severity
    evidence: Mapping[str, float]
    window_ms: tuple[int, int]


@dataclass(frozen=True)
class RuleHistory:
    """Windowed series the rules consume, all in canonical units.

    Each series is time-ascending (timestamp, value); accel_mag carries
    |a| magnitudes of movement samples. first_seen records the earliest
    stored timestamp per series name, for window-coverage checks.
    """

    cpk: Sequence[Sample] = ()
    alt: Sequence[Sample] = ()
    ast: Sequence[Sample] = ()
    emg_rms: Sequence[Sample] = ()
    hrv: Sequence[Sample] = ()
    spo2: Sequence[Sample] = ()
    heart_rate: Sequence[Sample] = ()
    temperature: Sequence[Sample] = ()
    humidity: Sequence[Sample] = ()
    accel_mag: Sequence[Sample] = ()
    falls: Sequence[FallRecord] = ()
    first_seen: Mapping[str, int] = field(default_factory=dict)


@dataclass(frozen=True)
class RuleOutcome:
    firings: tuple[RuleFiring, ...]
    not_evaluated: tuple[str, ...]

    def fired(self, rule_id: str) -> bool:
        return any(f.rule_id == rule_id for f in self.firings)


def _latest(series: Sequence[Sample]) -> Sample | None:
    return series[-1] if series else None

def _in_window(series: Sequence[Sample], lo: int, hi: int) -> list[Sample]:
    return [s for s in series if lo <= s[0] < hi]


def _window_covered(history: RuleHistory, name: str, series, lo: int) -> bool:
    """True when stored history for the series reaches back to the window start."""
    first = history.first_seen.get(name)
    if first is None:
        first = series[0][0] if series else None
    return first is not None and first <= lo


def evaluate_rules(history: RuleHistory, thresholds: ThresholdSet, now: int) -> RuleOutcome:
    """Apply the full rule catalog at `now`.

    Rules depend only on window aggregates or the latest sample, so the
    outcome is independent of in-window sample order. Windowed rules with
    insufficient history are reported NOT_EVALUATED rather than fired.
    """
    firings: list[RuleFiring] = []
    skipped: list[str] = []

    def fire(rule_id: str, evidence: Mapping[str, float], window: tuple[int, int]):
        firings.append(RuleFiring(
            rule_id=rule_id, severity=RULE_SEVERITY[rule_id],
            evidence=dict(evidence), window_ms=window,
        ))

    # R1: CPK max-min over trailing 24 h above the delta threshold
    day_lo = now - 24 * HOUR_MS
    cpk_day = _in_window(history.cpk, day_lo, now + 1)
    if len(cpk_day) >= 2:
        values = [v for _, v in cpk_day]
        delta = max(values) - min(values)
        if delta > thresholds.cpk_delta_24h:
            fire("R1_CPK_DELTA_24H", {"delta": delta, "max": max(values), "min": min(values)},
                 (day_lo, now))
    else:
        skipped.append("R1_CPK_DELTA_24H")

    # R2: every CPK sample in the sustained window above the sustained level
    sus_lo = now - int(thresholds.sustained_hours * HOUR_MS)
    cpk_sus = _in_window(history.cpk, sus_lo, now + 1)
    if cpk_sus and _window_covered(history, "cpk", history.cpk, sus_lo):
        if all(v > thresholds.cpk_sustained for _, v in cpk_sus):
            fire("R2_CPK_SUSTAINED",
                 {"min": min(v for _, v in cpk_sus), "samples": float(len(cpk_sus))},
                 (sus_lo, now))
    else:
        skipped.append("R2_CPK_SUSTAINED")

    # R3-R5, R7-R9: latest-sample thresholds
    for rule_id, series, bound, above in (
        ("R3_CPK_CRITICAL", history.cpk, thresholds.cpk_critical, True),
        ("R4_ALT_HIGH", history.alt, thresholds.alt_max, True),
        ("R5_AST_HIGH", history.ast, thresholds.ast_max, True),
        ("R7_HRV_LOW", history.hrv, thresholds.hrv_min_ms, False),
        ("R8_SPO2_LOW", history.spo2, thresholds.spo2_min_pct, False),
        ("R9_HR_HIGH", history.heart_rate, thresholds.hr_max_bpm, True),
    ):
        latest = _latest(series)
        if latest is None:
            skipped.append(rule_id)
            continue
        ts, value = latest
        hit = value > bound if above else value < bound
        if hit:
            severity_override = None
            if rule_id == "R7_HRV_LOW" and value < thresholds.hrv_urgent_ms:
                severity_override = Severity.URGENT
            f = RuleFiring(
                rule_id=rule_id,
                severity=severity_override or RULE_SEVERITY[rule_id],
                evidence={"value": value, "threshold": bound},
                window_ms=(ts, now),
            )
            firings.append(f)

    # R6: 5-minute rolling mean of EMG RMS below the atrophy floor
    emg_lo = now - 5 * MINUTE_MS
    emg = _in_window(history.emg_rms, emg_lo, now + 1)
    if emg:
        mean = sum(v for _, v in emg) / len(emg)
        if mean < thresholds.emg_atrophy_mv:
            fire("R6_EMG_ATROPHY", {"mean_rms": mean, "samples": float(len(emg))},
                 (emg_lo, now))
    else:
        skipped.append("R6_EMG_ATROPHY")

    # R10: heat AND humidity, a strict conjunction of latest samples
    temp, hum = _latest(history.temperature), _latest(history.humidity)
    if temp is None or hum is None:
        skipped.append("R10_HEAT_HUMIDITY")
    elif temp[1] > thresholds.temp_max_c and hum[1] > thresholds.humidity_max_pct:
        fire("R10_HEAT_HUMIDITY", {"temperature": temp[1], "humidity": hum[1]},
             (min(temp[0], hum[0]), now))

    # R11: movement magnitude continuously above the activity floor
    act_lo = now - int(thresholds.sustained_activity_minutes * MINUTE_MS)
    moves = _in_window(history.accel_mag, act_lo, now + 1)
    if moves and _window_covered(history, "accel_mag", history.accel_mag, act_lo):
        if all(v > thresholds.activity_g for _, v in moves):
            fire("R11_SUSTAINED_EXERTION",
                 {"min_magnitude": min(v for _, v in moves), "samples": float(len(moves))},
                 (act_lo, now))
    else:
        skipped.append("R11_SUSTAINED_EXERTION")

    # R12: a recent fall event
    recent_falls = [f for f in history.falls if now - FALL_RECENT_MS < f.timestamp <= now]
    if recent_falls:
        latest_fall = max(recent_falls, key=lambda f: f.timestamp)
        fire("R12_FALL",
             {"impact_g": latest_fall.impact_g,
              "orientation_change_deg": latest_fall.orientation_change_deg},
             (latest_fall.timestamp, now))

    return RuleOutcome(firings=tuple(firings), not_evaluated=tuple(skipped))


# --------------------------------------------------------------------------
# alert lifecycle
# --------------------------------------------------------------------------

COOLDOWN_MS = 30 * MINUTE_MS


@dataclass(frozen=True)
class AlertEvent:
    """What the book did in response to an evaluation, for log + stream."""

    event: str   # created | severity | renotify | acked | resolved
    alert: Alert
    at: int


class AlertBook:
    """Single-writer alert table keyed by (patient, rule).

    One active (OPEN or ACKED) alert per rule per patient: repeat firings
    inside the cooldown refresh it silently, a severity increase escalates
    and re-notifies, and a rule that stays quiet for a full evaluation
    window auto-resolves its alert. Resolved alerts never reopen; a later
    firing creates a fresh alert id.
    """

    def __init__(self, cooldown_ms: int = COOLDOWN_MS, clear_after_ms: int = 5_000):
        self.cooldown_ms = cooldown_ms
        self.clear_after_ms = clear_after_ms
        self._alerts: dict[str, Alert] = {}
        self._active: dict[tuple[str, str], str] = {}
        self._last_seen: dict[str, int] = {}
        self._last_notified: dict[str, int] = {}
        self._ids = itertools.count(1)

    # -- recovery -----------------------------------------------------------

    @classmethod
    def from_log(cls, events: Iterable[Mapping], cooldown_ms: int = COOLDOWN_MS,
                 clear_after_ms: int = 5_000) -> "AlertBook":
        """Fold persisted alert events back into the in-memory state."""
        from .model import alert_from_record

        book = cls(cooldown_ms, clear_after_ms)
        max_id = 0
        for payload in events:
            alert = alert_from_record(payload["alert"])
            at = int(payload["at"])
            book._alerts[alert.alert_id] = alert
            key = (alert.patient_id, alert.rule_id)
            if alert.state is AlertState.RESOLVED:
                if book._active.get(key) == alert.alert_id:
                    del book._active[key]
            else:
                book._active[key] = alert.alert_id
                book._last_seen.setdefault(alert.alert_id, at)
                if payload["event"] in ("created", "severity", "renotify"):
                    book._last_notified[alert.alert_id] = at
            try:
                num = int(alert.alert_id.split("-")[-1])
                max_id = max(max_id, num)
            except ValueError:
                pass
        book._ids = itertools.count(max_id + 1)
        return book

    # -- queries ------------------------------------------------------------

    def get(self, alert_id: str) -> Alert | None:
        return self._alerts.get(alert_id)

    def all_alerts(self, state: AlertState | None = None) -> list[Alert]:
        alerts = sorted(self._alerts.values(), key=lambda a: a.alert_id)
        if state is None:
            return alerts
        return [a for a in alerts if a.state is state]

    # -- evaluation path ----------------------------------------------------

    def apply(self, patient_id: str, outcome: RuleOutcome, now: int) -> list[AlertEvent]:
        events: list[AlertEvent] = []
        fired_rules = set()
        for firing in outcome.firings:
            fired_rules.add(firing.rule_id)
            events.extend(self._apply_firing(patient_id, firing, now))
        # auto-resolve active alerts whose rule stayed clear a full window,
        # unless the rule could not be evaluated at all this round
        for (pid, rule_id), alert_id in list(self._active.items()):
            if pid != patient_id or rule_id in fired_rules:
                continue
            if rule_id in outcome.not_evaluated or rule_id not in RULE_SEVERITY:
                continue  # escalation alerts clear only via operator action
            if now - self._last_seen.get(alert_id, now) >= self.clear_after_ms:
                alert = self._alerts[alert_id].resolved(now)
                self._alerts[alert_id] = alert
                del self._active[(pid, rule_id)]
                events.append(AlertEvent(event="resolved", alert=alert, at=now))
        return events

    def _apply_firing(self, patient_id: str, firing: RuleFiring, now: int) -> list[AlertEvent]:
        key = (patient_id, firing.rule_id)
        active_id = self._active.get(key)
        if active_id is None:
            alert = Alert(
                alert_id=f"{patient_id}-{next(self._ids)}",
                patient_id=patient_id,
                rule_id=firing.rule_id,
                severity=firing.severity,
                trigger_values=dict(firing.evidence),
                created_at=now,
            )
            self._alerts[alert.alert_id] = alert
            self._active[key] = alert.alert_id
            self._last_seen[alert.alert_id] = now
            self._last_notified[alert.alert_id] = now
            return [AlertEvent(event="created", alert=alert, at=now)]
        alert = self._alerts[active_id]
        self._last_seen[active_id] = now
        if severity_rank(firing.severity) > severity_rank(alert.severity):
            alert = replace(alert, severity=firing.severity,
                            trigger_values=dict(firing.evidence))
            self._alerts[active_id] = alert
            self._last_notified[active_id] = now
            return [AlertEvent(event="severity", alert=alert, at=now)]
        if now - self._last_notified.get(active_id, 0) >= self.cooldown_ms:
            self._last_notified[active_id] = now
            return [AlertEvent(event="renotify", alert=alert, at=now)]
        return []

    # -- operator path --------------------------------------------------------

    def ack(self, alert_id: str, by: str, now: int) -> AlertEvent:
        alert = self._require(alert_id).acked(by, now)
        self._alerts[alert_id] = alert
        return AlertEvent(event="acked", alert=alert, at=now)

    def resolve(self, alert_id: str, now: int) -> AlertEvent:
        alert = self._require(alert_id).resolved(now)
        self._alerts[alert_id] = alert
        key = (alert.patient_id, alert.rule_id)
        if self._active.get(key) == alert_id:
            del self._active[key]
        return AlertEvent(event="resolved", alert=alert, at=now)

    def _require(self, alert_id: str) -> Alert:
        alert = self._alerts.get(alert_id)
        if alert is None:
            raise KeyError(f"unknown alert {alert_id!r}")
        return alert


# --------------------------------------------------------------------------
# escalation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Notification:
    patient_id: str
    audience: tuple[str, ...]
    message: str
    severity: Severity
    at: int


def escalate(
    assessment: RiskAssessment,
    profile: PatientProfile,
    now: int,
) -> tuple[Cadence, list[Notification]]:
    """Cadence step-up on tier; never steps down automatically.

    MODERATE pushes cadence to at least daily check-ins and notifies both
    caregiver and provider; HIGH pins continuous watch with an immediate-
    intervention notification. De-escalation is an explicit operator action
    through the console.
    """
    current = profile.monitoring_cadence
    notifications: list[Notification] = []
    if assessment.tier is Tier.HIGH:
        target = Cadence.CONTINUOUS_WATCH
        if cadence_rank(target) > cadence_rank(current):
            notifications.append(Notification(
                patient_id=profile.patient_id,
                audience=("caregiver", "provider"),
                message=(
                    f"High risk (score {assessment.scaled_score:.1f}/10): immediate "
                    "intervention required; monitoring escalated to continuous watch"
                ),
                severity=Severity.EMERGENCY,
                at=now,
            ))
    elif assessment.tier is Tier.MODERATE:
        target = Cadence.DAILY_CHECKIN
        if cadence_rank(target) > cadence_rank(current):
            notifications.append(Notification(
                patient_id=profile.patient_id,
                audience=("caregiver", "provider"),
                message=(
                    f"Moderate risk (score {assessment.scaled_score:.1f}/10): "
                    "monitoring frequency increased to daily check-ins"
                ),
                severity=Severity.URGENT,
                at=now,
            ))
    else:
        target = current
    new_cadence = target if cadence_rank(target) > cadence_rank(current) else current
    return new_cadence, notifications
