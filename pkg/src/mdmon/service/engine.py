"""The analytics core behind the HTTP surface.

Time here is logical: the engine's "now" is the newest timestamp it has
ingested, so evaluation intervals, alert cooldowns, and nightly retrains
all run on simulated time and the whole pipeline is deterministic at any
acceleration. Evaluation is change-driven with a floor: a patient is
re-scored when new data lands and the floor interval has passed, or
immediately when a critical envelope arrives.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import dataclass, field, replace
from statistics import median
from typing import Any, Mapping

import numpy as np

from .. import forecast as fc
from ..gateway import Priority, open_envelope
from ..model import (
    Cadence,
    MetricKind,
    PatientProfile,
    RiskAssessment,
    ThresholdSet,
    assessment_from_record,
    default_thresholds,
    effective_thresholds,
    to_record,
)
from ..riskscore import (
    AlertBook,
    MissingInput,
    RiskInputs,
    RuleFiring,
    RuleHistory,
    RuleOutcome,
    compute_risk,
    escalate,
    evaluate_rules,
)
from ..learn import Dataset, metrics as learn_metrics, split, train_forest
from ..learn.data import FEATURE_NAMES
from ..store import EventLog
from .stream import StreamBroker, StreamEvent

log = logging.getLogger(__name__)

HOUR_MS = 3_600_000
DAY_MS = 24 * HOUR_MS

_EVENT_TYPE = {
    "reading": "reading",
    "emg_features": "reading",
    "fall": "reading",
    "assessment": "assessment",
    "alert_event": "alert",
}


@dataclass
class ServiceConfig:
    data_dir: str
    listen: str = "127.0.0.1:8000"
    gateway_keys: dict[str, bytes] = field(default_factory=dict)  # gateway hex -> key
    default_key: bytes | None = None     # fallback for unknown gateways
    eval_interval_ms: int = 5_000        # simulated milliseconds
    # tighter evaluation floors for escalated monitoring cadences
    cadence_eval_interval_ms: dict[str, int] = field(default_factory=lambda: {
        Cadence.DAILY_CHECKIN.value: 5_000,
        Cadence.CONTINUOUS_WATCH.value: 1_000,
    })
    cooldown_ms: int = 30 * 60_000
    window_samples: int = 1024
    forecast_horizon: int = 14
    forecast_min_points: int = 4
    forecast_p: int = 1
    retrain: bool = True
    retrain_trees: int = 15
    retrain_min_rows: int = 60
    cors_origins: list[str] = field(default_factory=lambda: ["*"])
    console_dir: str | None = None   # serve a built console bundle at /console

    @staticmethod
    def from_env() -> "ServiceConfig":
        key_hex = os.environ.get("MD_GATEWAY_KEY", "")
        return ServiceConfig(
            data_dir=os.environ.get("MD_DATA_DIR", "./mdmon-data"),
            listen=os.environ.get("MD_LISTEN", "127.0.0.1:8000"),
            default_key=bytes.fromhex(key_hex) if key_hex else None,
        )


def _feature_row(values: Mapping[str, float | None]) -> list[float | None]:
    return [values.get(name) for name in FEATURE_NAMES]


_METRIC_FOR_FEATURE = {
    "cpk": MetricKind.CPK,
    "alt": MetricKind.ALT,
    "ast": MetricKind.AST,
    "emg_rms": MetricKind.EMG_AMPLITUDE,
    "spo2": MetricKind.SPO2,
    "heart_rate": MetricKind.HEART_RATE,
    "hrv": MetricKind.HRV,
    "temperature": MetricKind.TEMPERATURE,
    "humidity": MetricKind.HUMIDITY,
}


class AnalyticsEngine:
    """Single-writer ingest + evaluation pipeline over the event log."""

    def __init__(self, config: ServiceConfig, store: EventLog | None = None,
                 broker: StreamBroker | None = None):
        self.config = config
        self.store = store or EventLog(config.data_dir)
        self.broker = broker or StreamBroker()
        self._lock = threading.RLock()
        self.book = AlertBook.from_log(
            self.store.alert_events(),
            cooldown_ms=config.cooldown_ms,
            clear_after_ms=config.eval_interval_ms,
        )
        self.profiles: dict[str, PatientProfile] = {}
        self._load_profiles()
        self.sim_now = 0
        self.latest_assessment: dict[str, RiskAssessment] = {}
        for e in self.store.events_since(0):
            ts = e.payload.get("timestamp")
            if ts is not None:
                self.sim_now = max(self.sim_now, int(ts))
            if e.kind == "assessment":
                assessment = assessment_from_record(e.payload)
                self.latest_assessment[assessment.patient_id] = assessment
        self._last_eval: dict[str, int] = {}
        self._last_data: dict[str, int] = {}
        self._corpus_rows: list[list[float | None]] = []
        self._corpus_labels: list[str] = []
        self._retrain_day: int | None = None
        self.serving_model = None
        self.serving_model_info: dict[str, Any] = {}
        self.diagnostics: list[dict] = []

    # -- profiles -------------------------------------------------------------

    def _profiles_path(self) -> str:
        return os.path.join(self.config.data_dir, "profiles.json")

    def _load_profiles(self) -> None:
        path = self._profiles_path()
        if not os.path.exists(path):
            return
        from ..model import profile_from_record
        with open(path, encoding="utf-8") as fh:
            for record in json.load(fh):
                profile = profile_from_record(record)
                self.profiles[profile.patient_id] = profile

    def _save_profiles(self) -> None:
        path = self._profiles_path()
        tmp = path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump([to_record(p) for p in self.profiles.values()], fh)
        os.replace(tmp, path)

    def register_profile(self, profile: PatientProfile) -> None:
        with self._lock:
            self.profiles[profile.patient_id] = profile.validate()
            self._save_profiles()

    def _ensure_profile(self, patient_id: str) -> PatientProfile:
        profile = self.profiles.get(patient_id)
        if profile is None:
            profile = PatientProfile(patient_id=patient_id, display_name=patient_id)
            self.profiles[patient_id] = profile
            self._save_profiles()
        return profile

    def thresholds_for(self, patient_id: str) -> ThresholdSet:
        return effective_thresholds(self._ensure_profile(patient_id), default_thresholds())

    # -- ingest ---------------------------------------------------------------

    def _key_lookup(self, gateway_hex: str) -> bytes | None:
        key = self.config.gateway_keys.get(gateway_hex)
        return key if key is not None else self.config.default_key

    def ingest_wire(self, wire: bytes) -> dict:
        """Decrypt, dedupe, persist, and schedule evaluation. Returns the ack."""
        envelope = open_envelope(wire, self._key_lookup)
        with self._lock:
            before = self.store.last_lsn()
            self.store.append_batch(envelope.records)
            fresh = self.store.events_since(before)
            for event in fresh:
                self._publish(event.lsn, event.kind, event.payload)
            touched: set[str] = set()
            biomarker_patients: set[str] = set()
            for record in envelope.records:
                pid = record.patient_id
                touched.add(pid)
                self._ensure_profile(pid)
                ts = record.timestamp
                self.sim_now = max(self.sim_now, ts)
                self._last_data[pid] = max(self._last_data.get(pid, 0), ts)
                metric = getattr(record, "metric", None)
                if metric in (MetricKind.CPK, MetricKind.ALT, MetricKind.AST):
                    biomarker_patients.add(pid)
            for pid in sorted(touched):
                immediate = envelope.priority is Priority.CRITICAL
                cadence = self._ensure_profile(pid).monitoring_cadence
                floor = self.config.cadence_eval_interval_ms.get(
                    cadence.value, self.config.eval_interval_ms)
                due = self.sim_now - self._last_eval.get(pid, -10**15) >= floor
                if immediate or due:
                    self._evaluate(pid, self.sim_now)
            for pid in sorted(biomarker_patients):
                self._refresh_forecast(pid, self.sim_now)
            if self.config.retrain:
                self._maybe_retrain(self.sim_now)
        return {"ack": envelope.envelope_id}

    def publish_link_state(self, link_state) -> None:
        """Demo wiring surfaces edge link transitions on the event stream."""
        with self._lock:
            self._publish(self.store.last_lsn(), "link_state", {
                "active_link": link_state.active_link, "since": link_state.since,
            })

    def _publish(self, lsn: int, kind: str, payload: dict) -> None:
        event_type = _EVENT_TYPE.get(kind, kind)
        self.broker.publish(StreamEvent(lsn=lsn, type=event_type, payload=payload))

    # -- evaluation -----------------------------------------------------------

    def evaluate_pending(self) -> None:
        """Force evaluation for every patient with data newer than its last run."""
        with self._lock:
            for pid, last_data in sorted(self._last_data.items()):
                if last_data > self._last_eval.get(pid, -1):
                    self._evaluate(pid, self.sim_now)

    def _evaluate(self, patient_id: str, now: int) -> None:
        self._last_eval[patient_id] = now
        profile = self._ensure_profile(patient_id)
        try:
            thresholds = effective_thresholds(profile, default_thresholds())
        except Exception as exc:
            self._diagnostic(patient_id, now, f"thresholds: {exc}")
            return
        history = self._history(patient_id, now, thresholds)
        outcome = evaluate_rules(history, thresholds, now)

        assessment = None
        try:
            assessment = compute_risk(self._inputs(patient_id, now), thresholds, patient_id)
        except MissingInput as exc:
            self._diagnostic(patient_id, now, f"risk skipped: {exc}")
        except Exception as exc:
            self._diagnostic(patient_id, now, f"risk failed: {exc}")

        if assessment is not None:
            lsn = self.store.append_assessment(assessment)
            self._publish(lsn, "assessment", to_record(assessment))
            self.latest_assessment[patient_id] = assessment
            self._corpus_add(patient_id, assessment)
            new_cadence, notifications = escalate(assessment, profile, now)
            if new_cadence is not profile.monitoring_cadence:
                self.profiles[patient_id] = replace(profile, monitoring_cadence=new_cadence)
                self._save_profiles()
            for note in notifications:
                # escalation notifications ride the alert channel so the
                # console and stream surface them like any other alert
                firing = RuleFiring(
                    rule_id="ESCALATION",
                    severity=note.severity,
                    evidence={
                        "scaled_score": assessment.scaled_score,
                        "tier": assessment.tier.value,
                        "message": note.message,
                        "audience": list(note.audience),
                    },
                    window_ms=(now, now),
                )
                synthetic = RuleOutcome(firings=(firing,), not_evaluated=())
                for event in self.book.apply(patient_id, synthetic, now):
                    lsn = self.store.append_alert_event(event.event, event.alert, now)
                    self._publish(lsn, "alert_event",
                                  {"event": event.event, "at": now,
                                   "alert": to_record(event.alert)})

        for event in self.book.apply(patient_id, outcome, now):
            lsn = self.store.append_alert_event(event.event, event.alert, now)
            self._publish(lsn, "alert_event",
                          {"event": event.event, "at": now, "alert": to_record(event.alert)})

    def _inputs(self, patient_id: str, now: int) -> RiskInputs:
        latest = {}
        staleness = {}
        for name, metric in (("cpk", MetricKind.CPK), ("alt", MetricKind.ALT),
                             ("ast", MetricKind.AST), ("emg_rms", MetricKind.EMG_AMPLITUDE)):
            entry = self.store.latest(patient_id, metric)
            if entry is None:
                raise MissingInput(f"{name} never observed for {patient_id}")
            ts, _dev, _seq, value = entry
            latest[name] = float(value)
            staleness[name] = now - ts
        return RiskInputs(cpk=latest["cpk"], alt=latest["alt"], ast=latest["ast"],
                          emg_rms=latest["emg_rms"], as_of=now, staleness_ms=staleness)

    def _history(self, patient_id: str, now: int, thresholds: ThresholdSet) -> RuleHistory:
        day_lo = now - 25 * HOUR_MS

        def window(metric, lo):
            return tuple((ts, float(v)) for ts, _d, _s, v in
                         self.store.query_range(patient_id, metric, lo, now + 1))

        act_lo = now - int(thresholds.sustained_activity_minutes * 60_000) - HOUR_MS
        first_seen = {}
        for name, metric in (("cpk", MetricKind.CPK), ("accel_mag", MetricKind.ACCEL)):
            first = self.store.first_timestamp(patient_id, metric)
            if first is not None:
                first_seen[name] = first
        return RuleHistory(
            cpk=window(MetricKind.CPK, day_lo),
            alt=window(MetricKind.ALT, day_lo),
            ast=window(MetricKind.AST, day_lo),
            emg_rms=window(MetricKind.EMG_AMPLITUDE, now - HOUR_MS),
            hrv=window(MetricKind.HRV, now - HOUR_MS),
            spo2=window(MetricKind.SPO2, now - HOUR_MS),
            heart_rate=window(MetricKind.HEART_RATE, now - HOUR_MS),
            temperature=window(MetricKind.TEMPERATURE, now - 2 * HOUR_MS),
            humidity=window(MetricKind.HUMIDITY, now - 2 * HOUR_MS),
            accel_mag=window(MetricKind.ACCEL, act_lo),
            falls=tuple(self.store.falls(patient_id, now - HOUR_MS, now + 1)),
            first_seen=first_seen,
        )

    def _diagnostic(self, patient_id: str, now: int, message: str) -> None:
        self.diagnostics.append({"patient_id": patient_id, "at": now, "message": message})
        log.warning("evaluation diagnostic for %s at %d: %s", patient_id, now, message)

    # -- forecasting ------------------------------------------------------------

    def forecast_for(self, patient_id: str, metric: MetricKind, horizon: int,
                     persist: bool = False) -> fc.ForecastResult | None:
        with self._lock:
            return self._forecast(patient_id, metric, horizon, persist)

    def _refresh_forecast(self, patient_id: str, now: int) -> None:
        try:
            self._forecast(patient_id, MetricKind.CPK, self.config.forecast_horizon,
                           persist=True)
        except Exception as exc:
            self._diagnostic(patient_id, now, f"forecast failed: {exc}")

    def _forecast(self, patient_id: str, metric: MetricKind, horizon: int,
                  persist: bool) -> fc.ForecastResult | None:
        series = self.store.query_range(patient_id, metric, 0, self.sim_now + 1)
        if len(series) < self.config.forecast_min_points:
            return None
        values, step_s = _resample([(ts, float(v)) for ts, _d, _s, v in series])
        if len(values) < self.config.forecast_min_points:
            return None
        thresholds = self.thresholds_for(patient_id)
        try:
            model = fc.fit_ar(values, p=self.config.forecast_p, d=1,
                              name=f"{patient_id}:{metric.value}", floor_mult=3)
            result = fc.forecast(model, values, horizon, thresholds,
                                 metric=metric.value, step_seconds=step_s)
        except (fc.SeriesTooShort, fc.NonstationaryModel):
            return None
        if persist:
            self.store.append_forecast(patient_id, metric.value, self.sim_now,
                                       result.to_record())
        return result

    # -- feedback loop ------------------------------------------------------------

    def _corpus_add(self, patient_id: str, assessment: RiskAssessment) -> None:
        values: dict[str, float | None] = {}
        for name, metric in _METRIC_FOR_FEATURE.items():
            entry = self.store.latest(patient_id, metric)
            values[name] = None if entry is None else float(entry[3])
        self._corpus_rows.append(_feature_row(values))
        self._corpus_labels.append(assessment.tier.value)

    def corpus_dataset(self) -> Dataset | None:
        """Self-labeled corpus with carry-forward + column-mean imputation."""
        if len(self._corpus_rows) < 2:
            return None
        cols = len(FEATURE_NAMES)
        data = np.full((len(self._corpus_rows), cols), np.nan)
        for i, row in enumerate(self._corpus_rows):
            for j, v in enumerate(row):
                if v is not None:
                    data[i, j] = v
        for j in range(cols):
            col = data[:, j]
            mean = float(np.nanmean(col)) if not np.all(np.isnan(col)) else 0.0
            col[np.isnan(col)] = mean
        return Dataset(data, tuple(self._corpus_labels), FEATURE_NAMES)

    def _maybe_retrain(self, now: int) -> None:
        day = now // DAY_MS
        if self._retrain_day is None:
            self._retrain_day = day
            return
        if day <= self._retrain_day:
            return
        self._retrain_day = day
        self.retrain(now)

    def retrain(self, now: int) -> dict | None:
        """Nightly model refresh; keeps the serving model unless validation
        accuracy regresses more than 2 points."""
        dataset = self.corpus_dataset()
        if dataset is None or len(dataset) < self.config.retrain_min_rows \
                or len(dataset.classes()) < 2:
            return None
        seed = int(now // DAY_MS)
        try:
            train, val, _test = split(dataset, (0.8, 0.1, 0.1), seed=seed)
        except Exception as exc:
            self._diagnostic("*", now, f"retrain split failed: {exc}")
            return None
        candidate = train_forest(train, n_trees=self.config.retrain_trees, seed=seed)
        val_acc = learn_metrics(candidate.predict(val.features), val.labels)["accuracy"]
        prev_acc = self.serving_model_info.get("val_accuracy")
        if prev_acc is not None and val_acc < prev_acc - 0.02:
            info = {"at": now, "val_accuracy": val_acc, "kept_previous": True}
        else:
            self.serving_model = candidate
            info = {"at": now, "val_accuracy": val_acc, "kept_previous": False}
            self.serving_model_info = info
        return info

    # -- operator actions ---------------------------------------------------------

    def ack_alert(self, alert_id: str, by: str) -> dict:
        with self._lock:
            event = self.book.ack(alert_id, by, self.sim_now)
            lsn = self.store.append_alert_event("acked", event.alert, self.sim_now)
            self._publish(lsn, "alert_event",
                          {"event": "acked", "at": self.sim_now, "alert": to_record(event.alert)})
            return to_record(event.alert)

    def resolve_alert(self, alert_id: str) -> dict:
        with self._lock:
            event = self.book.resolve(alert_id, self.sim_now)
            lsn = self.store.append_alert_event("resolved", event.alert, self.sim_now)
            self._publish(lsn, "alert_event",
                          {"event": "resolved", "at": self.sim_now,
                           "alert": to_record(event.alert)})
            return to_record(event.alert)

    def override_thresholds(
        self, patient_id: str, overrides: Mapping[str, float | None]
    ) -> ThresholdSet:
        with self._lock:
            profile = self._ensure_profile(patient_id)
            merged_overrides = {**profile.threshold_overrides, **overrides}
            # an explicit null clears the override, restoring the default
            merged_overrides = {k: v for k, v in merged_overrides.items() if v is not None}
            merged = default_thresholds().merged(merged_overrides)  # raises InvalidOverride
            self.profiles[patient_id] = replace(
                profile, threshold_overrides=merged_overrides)
            self._save_profiles()
            return merged

    def set_cadence(self, patient_id: str, cadence: Cadence) -> PatientProfile:
        with self._lock:
            profile = self._ensure_profile(patient_id)
            self.profiles[patient_id] = replace(profile, monitoring_cadence=cadence)
            self._save_profiles()
            return self.profiles[patient_id]


def _resample(points: list[tuple[int, float]], max_buckets: int = 40) -> tuple[list[float], float]:
    """Last-value bucketing onto an even grid inferred from recent gaps.

    The grid step is the median gap of the trailing samples, clamped to
    [30 minutes, 1 day]; missing buckets carry the previous value forward.
    """
    gaps = [b - a for (a, _), (b, _) in zip(points, points[1:]) if b > a]
    if not gaps:
        return [v for _, v in points], 86_400.0
    step = int(median(gaps[-10:]))
    step = max(30 * 60_000, min(DAY_MS, step))
    buckets: dict[int, float] = {}
    for ts, v in points:
        buckets[ts // step] = v
    keys = sorted(buckets)
    keys = keys[-max_buckets:]
    out = []
    prev = buckets[keys[0]]
    for k in range(keys[0], keys[-1] + 1):
        prev = buckets.get(k, prev)
        out.append(prev)
    return out, step / 1000.0
