"""Append-only JSONL event log with in-memory time-range indexes.

One file per record class under data_dir: readings.jsonl (raw readings
plus derived EMG-feature and fall records, discriminated by "kind"),
alerts.jsonl (lifecycle events folded into alert state), assessments.jsonl
and forecasts.jsonl. Every line carries a globally increasing log sequence
number, so the unified event history can be rebuilt on startup by merging
files. Single writer, many readers.
"""

from __future__ import annotations

import json
import os
import threading
from bisect import bisect_left, insort
from dataclasses import dataclass
from typing import Any, Iterable, Mapping

from .model import (
    Alert,
    EmgFeatureRecord,
    FallRecord,
    MetricKind,
    RiskAssessment,
    SensorReading,
    alert_from_record,
    canonical_json,
    fall_from_record,
    to_record,
)

READINGS_FILE = "readings.jsonl"
ALERTS_FILE = "alerts.jsonl"
ASSESSMENTS_FILE = "assessments.jsonl"
FORECASTS_FILE = "forecasts.jsonl"


class IoError(OSError):
    code = "IO_ERROR"


@dataclass(frozen=True)
class LogEvent:
    lsn: int
    kind: str          # reading | emg_features | fall | assessment | alert_event | forecast
    payload: dict


class EventLog:
    """Durable store for the analytics tier.

    append_* methods are fsync-durable before returning (append_batch
    amortizes one fsync over a whole envelope). Readings deduplicate on
    (kind, device_id, seq): a replay is a silent no-op returning the
    original LSN.
    """

    def __init__(self, data_dir: str):
        self.data_dir = data_dir
        os.makedirs(data_dir, exist_ok=True)
        self._lock = threading.RLock()
        self._lsn = 0
        self._events: list[LogEvent] = []
        self._event_lsns: list[int] = []   # parallel to _events, for bisect
        self._dedupe: dict[tuple[str, str, int], int] = {}
        self._fall_keys: dict[tuple[str, int], int] = {}
        # (patient, metric) -> sorted [(ts, device, seq, value)]
        self._series: dict[tuple[str, str], list[tuple]] = {}
        self._first_ts: dict[tuple[str, str], int] = {}
        self._falls: dict[str, list[FallRecord]] = {}
        self._files: dict[str, Any] = {}
        self._load()

    # -- startup ------------------------------------------------------------

    def _load(self) -> None:
        rows: list[tuple[int, str, dict]] = []
        for fname in (READINGS_FILE, ALERTS_FILE, ASSESSMENTS_FILE, FORECASTS_FILE):
            path = os.path.join(self.data_dir, fname)
            if not os.path.exists(path):
                continue
            with open(path, encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        d = json.loads(line)
                    except json.JSONDecodeError:
                        continue  # torn tail write from a crash
                    rows.append((int(d["lsn"]), d["kind"], d))
        rows.sort(key=lambda r: r[0])
        for lsn, kind, d in rows:
            self._lsn = max(self._lsn, lsn)
            self._index(LogEvent(lsn=lsn, kind=kind, payload=d["record"]))

    def _index(self, event: LogEvent) -> None:
        self._events.append(event)
        self._event_lsns.append(event.lsn)
        kind, rec = event.kind, event.payload
        if kind == "reading":
            self._dedupe[("reading", rec["device_id"], int(rec["seq"]))] = event.lsn
            value = rec.get("value")
            metric = rec["metric"]
            if value is None or rec.get("quality", "OK") != "OK":
                return  # SUSPECT and MISSING are stored for audit, never scored
            if metric == MetricKind.EMG_WAVEFORM.value:
                return  # raw windows are audit-only; features carry the series
            if isinstance(value, list):
                value = float(sum(v * v for v in value)) ** 0.5  # 3-axis magnitude
            self._index_series(
                rec["patient_id"], metric, int(rec["timestamp"]),
                rec["device_id"], int(rec["seq"]), float(value),
            )
        elif kind == "emg_features":
            self._dedupe[("emg_features", rec["device_id"], int(rec["seq"]))] = event.lsn
            # the RMS rides the EMG_AMPLITUDE series for windowed rules
            self._index_series(
                rec["patient_id"], MetricKind.EMG_AMPLITUDE.value, int(rec["timestamp"]),
                rec["device_id"], int(rec["seq"]), float(rec["rms_mv"]),
            )
        elif kind == "fall":
            self._fall_keys[(rec["device_id"], int(rec["timestamp"]))] = event.lsn
            self._falls.setdefault(rec["patient_id"], []).append(fall_from_record(rec))

    def _index_series(self, patient, metric, ts, device, seq, value) -> None:
        key = (patient, metric)
        entry = (ts, device, seq, value)
        insort(self._series.setdefault(key, []), entry)
        if key not in self._first_ts or ts < self._first_ts[key]:
            self._first_ts[key] = ts

    # -- writes -------------------------------------------------------------

    def _file(self, fname: str):
        fh = self._files.get(fname)
        if fh is None:
            fh = open(os.path.join(self.data_dir, fname), "a", encoding="utf-8")
            self._files[fname] = fh
        return fh

    def _write(self, fname: str, kind: str, record: dict, fsync: bool = True) -> int:
        self._lsn += 1
        line = canonical_json({"lsn": self._lsn, "kind": kind, "record": record})
        try:
            fh = self._file(fname)
            fh.write(line + "\n")
            fh.flush()
            if fsync:
                os.fsync(fh.fileno())
        except OSError as exc:
            raise IoError(f"append to {fname} failed: {exc}") from exc
        self._index(LogEvent(lsn=self._lsn, kind=kind, payload=record))
        return self._lsn

    def _sync(self, fname: str) -> None:
        fh = self._files.get(fname)
        if fh is not None:
            os.fsync(fh.fileno())

    def append_reading(self, reading: SensorReading, fsync: bool = True) -> int:
        with self._lock:
            key = ("reading", reading.device_id, reading.seq)
            if key in self._dedupe:
                return self._dedupe[key]
            return self._write(READINGS_FILE, "reading", to_record(reading), fsync)

    def append_feature(self, feature: EmgFeatureRecord, fsync: bool = True) -> int:
        with self._lock:
            key = ("emg_features", feature.device_id, feature.seq)
            if key in self._dedupe:
                return self._dedupe[key]
            return self._write(READINGS_FILE, "emg_features", to_record(feature), fsync)

    def append_fall(self, fall: FallRecord, fsync: bool = True) -> int:
        with self._lock:
            key = (fall.device_id, fall.timestamp)
            if key in self._fall_keys:
                return self._fall_keys[key]
            return self._write(READINGS_FILE, "fall", to_record(fall), fsync)

    def append_batch(self, records: Iterable[Any]) -> list[int]:
        """Append mixed reading/feature/fall records with one fsync at the end."""
        with self._lock:
            lsns = []
            for rec in records:
                if isinstance(rec, SensorReading):
                    lsns.append(self.append_reading(rec, fsync=False))
                elif isinstance(rec, EmgFeatureRecord):
                    lsns.append(self.append_feature(rec, fsync=False))
                elif isinstance(rec, FallRecord):
                    lsns.append(self.append_fall(rec, fsync=False))
                else:
                    raise TypeError(f"unsupported record type {type(rec)!r}")
            self._sync(READINGS_FILE)
            return lsns

    def append_assessment(self, assessment: RiskAssessment) -> int:
        with self._lock:
            return self._write(ASSESSMENTS_FILE, "assessment", to_record(assessment))

    def append_forecast(self, patient_id: str, metric: str, as_of: int, result: dict) -> int:
        with self._lock:
            record = {"patient_id": patient_id, "metric": metric, "as_of": as_of, **result}
            return self._write(FORECASTS_FILE, "forecast", record)

    def append_alert_event(self, event: str, alert: Alert, at: int) -> int:
        """event in {created, severity, renotify, acked, resolved}."""
        with self._lock:
            record = {"event": event, "at": at, "alert": to_record(alert)}
            return self._write(ALERTS_FILE, "alert_event", record)

    # -- queries ------------------------------------------------------------

    def query_range(self, patient_id: str, metric: MetricKind | str,
                    ts_from: int, ts_to: int) -> list[tuple[int, str, int, float]]:
        """Readings with ts_from <= timestamp < ts_to, ascending.

        Returns (timestamp, device_id, seq, value) tuples.
        """
        if ts_from > ts_to:
            raise ValueError("ts_from must be <= ts_to")
        metric = metric.value if isinstance(metric, MetricKind) else metric
        with self._lock:
            series = self._series.get((patient_id, metric), [])
            lo = bisect_left(series, (ts_from,))
            hi = bisect_left(series, (ts_to,))
            return list(series[lo:hi])

    def latest(self, patient_id: str, metric: MetricKind | str):
        """Most recent entry, ties broken by (device_id, seq); None if absent."""
        metric = metric.value if isinstance(metric, MetricKind) else metric
        with self._lock:
            series = self._series.get((patient_id, metric), [])
            return series[-1] if series else None

    def first_timestamp(self, patient_id: str, metric: MetricKind | str) -> int | None:
        metric = metric.value if isinstance(metric, MetricKind) else metric
        with self._lock:
            return self._first_ts.get((patient_id, metric))

    def falls(self, patient_id: str, ts_from: int, ts_to: int) -> list[FallRecord]:
        with self._lock:
            return [f for f in self._falls.get(patient_id, ())
                    if ts_from <= f.timestamp < ts_to]

    def events_since(self, lsn: int) -> list[LogEvent]:
        with self._lock:
            lo = bisect_left(self._event_lsns, lsn + 1)
            return self._events[lo:]

    def alert_events(self) -> list[dict]:
        with self._lock:
            return [e.payload for e in self._events if e.kind == "alert_event"]

    def fold_alerts(self) -> dict[str, Alert]:
        """Reconstruct current alert state by folding alert events in order."""
        with self._lock:
            alerts: dict[str, Alert] = {}
            for e in self._events:
                if e.kind != "alert_event":
                    continue
                payload = e.payload
                alert = alert_from_record(payload["alert"])
                alerts[alert.alert_id] = alert
            return alerts

    def contains(self, kind: str, device_id: str, seq: int) -> bool:
        """Record-identity check used by the delivery-conservation audit."""
        with self._lock:
            return (kind, device_id, seq) in self._dedupe

    def last_lsn(self) -> int:
        with self._lock:
            return self._lsn

    def reading_count(self) -> int:
        with self._lock:
            return sum(1 for e in self._events if e.kind == "reading")

    def metrics_for(self, patient_id: str) -> list[str]:
        with self._lock:
            return sorted({m for (p, m) in self._series if p == patient_id})

    def patients_seen(self) -> list[str]:
        with self._lock:
            return sorted({p for (p, _m) in self._series})

    def close(self) -> None:
        with self._lock:
            for fh in self._files.values():
                fh.close()
            self._files.clear()
