import numpy as np
import pytest

from mdmon.model import (
    Alert,
    EmgFeatureRecord,
    FallRecord,
    MetricKind,
    Quality,
    SensorReading,
    Severity,
)
from mdmon.store import EventLog


def reading(ts, seq, value=150.0, metric=MetricKind.CPK, device="p1-poct", pid="p1"):
    return SensorReading(patient_id=pid, device_id=device, metric=metric,
                         value=value, timestamp=ts, seq=seq, quality=Quality.OK)


class TestAppend:
    def test_dedupe_returns_original_lsn(self, tmp_path):
        log = EventLog(str(tmp_path))
        r = reading(1000, 1)
        lsn = log.append_reading(r)
        assert log.append_reading(r) == lsn
        assert log.reading_count() == 1

    def test_kill_restart_keeps_record(self, tmp_path):
        log = EventLog(str(tmp_path))
        log.append_reading(reading(1000, 1))
        # crash: no close, new process loads from disk
        log2 = EventLog(str(tmp_path))
        assert log2.reading_count() == 1
        assert log2.latest("p1", MetricKind.CPK)[3] == 150.0
        assert log2.last_lsn() == log.last_lsn()

    def test_distinct_lsns(self, tmp_path):
        log = EventLog(str(tmp_path))
        a = log.append_reading(reading(1000, 1))
        b = log.append_reading(reading(2000, 2))
        assert a != b

    def test_batch_mixed_records(self, tmp_path):
        log = EventLog(str(tmp_path))
        feat = EmgFeatureRecord(patient_id="p1", device_id="p1-emg", seq=1,
                                timestamp=1500, rms_mv=0.6, dominant_hz=85.0,
                                band_power_ratio=0.7, spike_flag=False)
        fall = FallRecord(patient_id="p1", device_id="p1-imu", timestamp=1800,
                          free_fall_ms=250.0, impact_g=3.0, orientation_change_deg=80.0)
        lsns = log.append_batch([reading(1000, 1), feat, fall])
        assert len(lsns) == 3
        # feature rms rides the EMG_AMPLITUDE series
        assert log.latest("p1", MetricKind.EMG_AMPLITUDE)[3] == 0.6
        assert log.falls("p1", 0, 5000)[0].impact_g == 3.0
        # replaying the same batch is a no-op
        assert log.append_batch([reading(1000, 1), feat, fall]) == lsns

    def test_torn_tail_tolerated(self, tmp_path):
        log = EventLog(str(tmp_path))
        log.append_reading(reading(1000, 1))
        log.close()
        with open(tmp_path / "readings.jsonl", "a", encoding="utf-8") as fh:
            fh.write('{"lsn": 99, "kind": "reading", "record": {"trunc')
        log2 = EventLog(str(tmp_path))
        assert log2.reading_count() == 1


class TestQueries:
    def test_empty_store(self, tmp_path):
        log = EventLog(str(tmp_path))
        assert log.query_range("p1", MetricKind.CPK, 0, 10_000) == []
        assert log.latest("p1", MetricKind.CPK) is None

    def test_half_open_interval(self, tmp_path):
        log = EventLog(str(tmp_path))
        for i, ts in enumerate((1000, 2000, 3000), start=1):
            log.append_reading(reading(ts, i))
        hits = log.query_range("p1", MetricKind.CPK, 2000, 3000)
        assert [h[0] for h in hits] == [2000]

    def test_latest_tiebreak(self, tmp_path):
        log = EventLog(str(tmp_path))
        log.append_reading(reading(1000, 5, value=100.0, device="a-dev"))
        log.append_reading(reading(1000, 3, value=200.0, device="b-dev"))
        ts, device, seq, value = log.latest("p1", MetricKind.CPK)
        assert (device, seq) == ("b-dev", 3)

    def test_bad_range(self, tmp_path):
        log = EventLog(str(tmp_path))
        with pytest.raises(ValueError):
            log.query_range("p1", MetricKind.CPK, 10, 5)

    def test_matches_linear_scan_oracle(self, tmp_path):
        rng = np.random.default_rng(31)
        log = EventLog(str(tmp_path))
        rows = []
        for seq in range(1, 400):
            ts = int(rng.integers(0, 100_000))
            value = float(rng.uniform(50, 250))
            r = reading(ts, seq, value=value)
            log.append_reading(r, fsync=False)
            rows.append((ts, r.device_id, seq, value))
        for _ in range(50):
            lo = int(rng.integers(0, 100_000))
            hi = lo + int(rng.integers(0, 50_000))
            expected = sorted(row for row in rows if lo <= row[0] < hi)
            assert log.query_range("p1", MetricKind.CPK, lo, hi) == expected

    def test_vector_metrics_indexed_by_magnitude(self, tmp_path):
        log = EventLog(str(tmp_path))
        log.append_reading(reading(1000, 1, value=(3.0, 0.0, 4.0),
                                   metric=MetricKind.ACCEL, device="p1-imu"))
        ts, _d, _s, value = log.latest("p1", MetricKind.ACCEL)
        assert value == pytest.approx(5.0)

    def test_waveforms_not_indexed(self, tmp_path):
        log = EventLog(str(tmp_path))
        win = tuple([0.1] * 8)
        log.append_reading(reading(1000, 1, value=win,
                                   metric=MetricKind.EMG_WAVEFORM, device="p1-emg"))
        assert log.query_range("p1", MetricKind.EMG_WAVEFORM, 0, 5000) == []
        assert log.reading_count() == 1  # still persisted for audit


class TestAlertFold:
    def test_fold_reconstructs_state_across_restart(self, tmp_path):
        log = EventLog(str(tmp_path))
        alert = Alert(alert_id="p1-1", patient_id="p1", rule_id="R8_SPO2_LOW",
                      severity=Severity.URGENT, trigger_values={"value": 88.0},
                      created_at=1000)
        log.append_alert_event("created", alert, 1000)
        log.append_alert_event("acked", alert.acked("dr", 2000), 2000)
        log2 = EventLog(str(tmp_path))
        folded = log2.fold_alerts()
        assert folded["p1-1"].state.value == "ACKED"
        assert folded["p1-1"].acked_by == "dr"

    def test_events_since(self, tmp_path):
        log = EventLog(str(tmp_path))
        first = log.append_reading(reading(1000, 1))
        second = log.append_reading(reading(2000, 2))
        assert [e.lsn for e in log.events_since(0)] == [first, second]
        assert [e.lsn for e in log.events_since(first)] == [second]
