import pytest

from mdmon import model
from mdmon.model import (
    Alert,
    AlertState,
    Cadence,
    IllegalTransition,
    InvalidOverride,
    MetricKind,
    PatientProfile,
    Quality,
    ReadingRejected,
    ReadingValidator,
    RiskAssessment,
    SensorReading,
    Severity,
    ThresholdSet,
    Tier,
    default_thresholds,
    effective_thresholds,
)


def reading(metric=MetricKind.SPO2, value=97.0, seq=1, **kw):
    base = dict(
        patient_id="p1", device_id="p1-ppg", metric=metric, value=value,
        timestamp=1_000, seq=seq, quality=Quality.OK,
    )
    base.update(kw)
    return SensorReading(**base)


class TestValidateReading:
    def test_in_range_accepted(self):
        v = ReadingValidator()
        r = reading(value=97.0)
        assert v.validate(r) is r

    def test_impossible_spo2_rejected(self):
        v = ReadingValidator()
        with pytest.raises(ReadingRejected) as e:
            v.validate(reading(value=130.0))
        assert e.value.code == model.OUT_OF_RANGE

    def test_negative_enzyme_rejected(self):
        with pytest.raises(ReadingRejected) as e:
            model.check_reading(reading(metric=MetricKind.CPK, value=-3.0))
        assert e.value.code == model.OUT_OF_RANGE

    def test_hr_bounds_exclusive(self):
        with pytest.raises(ReadingRejected):
            model.check_reading(reading(metric=MetricKind.HEART_RATE, value=0.0))
        with pytest.raises(ReadingRejected):
            model.check_reading(reading(metric=MetricKind.HEART_RATE, value=300.0))
        model.check_reading(reading(metric=MetricKind.HEART_RATE, value=299.0))

    def test_stale_seq_rejected(self):
        v = ReadingValidator()
        v.validate(reading(metric=MetricKind.CPK, value=150.0, seq=7, device_id="d1"))
        with pytest.raises(ReadingRejected) as e:
            v.validate(reading(metric=MetricKind.CPK, value=150.0, seq=5, device_id="d1"))
        assert e.value.code == model.STALE_SEQ
        # rejection does not advance the watermark
        v.validate(reading(metric=MetricKind.CPK, value=150.0, seq=8, device_id="d1"))

    def test_waveform_shape(self):
        v = ReadingValidator(window_samples=8)
        win = tuple(0.1 for _ in range(8))
        v.validate(reading(metric=MetricKind.EMG_WAVEFORM, value=win, device_id="d2"))
        with pytest.raises(ReadingRejected) as e:
            model.check_reading(
                reading(metric=MetricKind.EMG_WAVEFORM, value=win[:5], device_id="d3"),
                window_samples=8,
            )
        assert e.value.code == model.BAD_SHAPE

    def test_accel_is_three_axis(self):
        model.check_reading(reading(metric=MetricKind.ACCEL, value=(0.0, 0.0, 1.0)))
        with pytest.raises(ReadingRejected) as e:
            model.check_reading(reading(metric=MetricKind.ACCEL, value=(0.0, 1.0)))
        assert e.value.code == model.BAD_SHAPE

    def test_scalar_must_be_scalar(self):
        with pytest.raises(ReadingRejected) as e:
            model.check_reading(reading(metric=MetricKind.SPO2, value=(97.0,)))
        assert e.value.code == model.BAD_SHAPE

    def test_missing_quality_carries_no_value(self):
        r = reading(value=None, quality=Quality.MISSING)
        assert model.check_reading(r) is r
        with pytest.raises(ReadingRejected):
            model.check_reading(reading(value=97.0, quality=Quality.MISSING))

    def test_nan_rejected(self):
        with pytest.raises(ReadingRejected) as e:
            model.check_reading(reading(value=float("nan")))
        assert e.value.code == model.OUT_OF_RANGE

    def test_total_over_fuzzed_inputs(self):
        # every input is either accepted or rejected with a named code
        import random
        rng = random.Random(7)
        v = ReadingValidator(window_samples=8)
        metrics = list(MetricKind)
        for i in range(500):
            m = rng.choice(metrics)
            shape = rng.choice(["scalar", "vec3", "vec8", "none"])
            if shape == "scalar":
                value = rng.uniform(-200, 1200)
            elif shape == "vec3":
                value = tuple(rng.uniform(-20, 20) for _ in range(3))
            elif shape == "vec8":
                value = tuple(rng.uniform(-20, 20) for _ in range(8))
            else:
                value = None
            r = reading(metric=m, value=value, seq=rng.randint(0, 50),
                        device_id=f"d{rng.randint(0, 3)}",
                        quality=rng.choice(list(Quality)))
            try:
                v.validate(r)
            except ReadingRejected as e:
                assert e.code in (model.OUT_OF_RANGE, model.BAD_SHAPE, model.STALE_SEQ)


class TestThresholds:
    def test_defaults_match_published_values(self):
        t = default_thresholds()
        assert t.cpk_critical == 1000.0
        assert t.cpk_delta_24h == 500.0
        assert t.cpk_sustained == 200.0 and t.sustained_hours == 24.0
        assert t.alt_max == 140.0 and t.ast_max == 100.0
        assert t.emg_atrophy_mv == 0.5
        assert t.hrv_min_ms == 20.0
        assert t.spo2_min_pct == 90.0
        assert t.hr_max_bpm == 120.0
        assert t.temp_max_c == 30.0 and t.humidity_max_pct == 70.0
        assert t.sustained_activity_minutes == 30.0
        assert t.risk_moderate == 3.0 and t.risk_high == 6.0

    def test_merge_identity(self):
        p = PatientProfile(patient_id="p1")
        assert effective_thresholds(p, default_thresholds()) == default_thresholds()

    def test_single_field_override(self):
        p = PatientProfile(patient_id="p1", threshold_overrides={"spo2_min_pct": 92.0})
        merged = effective_thresholds(p, default_thresholds())
        assert merged.spo2_min_pct == 92.0
        assert merged.cpk_critical == 1000.0

    def test_tier_ordering_violation(self):
        p = PatientProfile(patient_id="p1", threshold_overrides={"risk_moderate": 7.0})
        with pytest.raises(InvalidOverride):
            effective_thresholds(p, default_thresholds())

    def test_unknown_field(self):
        p = PatientProfile(patient_id="p1", threshold_overrides={"bogus": 1.0})
        with pytest.raises(InvalidOverride):
            effective_thresholds(p, default_thresholds())

    def test_sustained_must_stay_below_critical(self):
        p = PatientProfile(patient_id="p1", threshold_overrides={"cpk_sustained": 1200.0})
        with pytest.raises(InvalidOverride):
            effective_thresholds(p, default_thresholds())

    def test_merge_idempotent(self):
        p = PatientProfile(
            patient_id="p1",
            threshold_overrides={"spo2_min_pct": 92.0, "hr_max_bpm": 110.0},
        )
        once = effective_thresholds(p, default_thresholds())
        twice = once.merged(p.threshold_overrides)
        assert once == twice


class TestProfiles:
    def test_baseline_cpk_band(self):
        PatientProfile(patient_id="p", baseline={"CPK": 150.0}).validate()
        with pytest.raises(model.DomainError):
            PatientProfile(patient_id="p", baseline={"CPK": 400.0}).validate()
        PatientProfile(
            patient_id="p", baseline={"CPK": 400.0}, abnormal_at_enrollment=True
        ).validate()


class TestAlertLattice:
    def make(self):
        return Alert(
            alert_id="a1", patient_id="p1", rule_id="R8",
            severity=Severity.URGENT, trigger_values={"spo2": 88.0}, created_at=100,
        )

    def test_open_ack_resolve(self):
        a = self.make().acked("dr", 200).resolved(300)
        assert a.state is AlertState.RESOLVED
        assert a.acked_at == 200 and a.resolved_at == 300 and a.acked_by == "dr"

    def test_open_resolve(self):
        a = self.make().resolved(150)
        assert a.state is AlertState.RESOLVED

    def test_illegal_paths(self):
        a = self.make()
        done = a.resolved(150)
        with pytest.raises(IllegalTransition):
            done.acked("dr", 200)
        with pytest.raises(IllegalTransition):
            done.resolved(200)
        with pytest.raises(IllegalTransition):
            a.acked("dr", 200).acked("dr2", 250)

    def test_timestamps_monotone(self):
        a = self.make()
        with pytest.raises(IllegalTransition):
            a.acked("dr", 50)  # before created_at
        with pytest.raises(IllegalTransition):
            a.acked("dr", 200).resolved(150)


class TestRoundTrips:
    def test_reading_round_trip(self):
        cases = [
            reading(),
            reading(metric=MetricKind.ACCEL, value=(0.1, -0.2, 0.97)),
            reading(metric=MetricKind.EMG_WAVEFORM, value=tuple([0.05] * 8)),
            reading(value=None, quality=Quality.MISSING),
        ]
        for r in cases:
            d = model.reading_from_record(model.to_record(r))
            assert d == r

    def test_thresholds_round_trip(self):
        t = default_thresholds().merged({"spo2_min_pct": 93.0})
        assert model.thresholds_from_record(model.to_record(t)) == t

    def test_profile_round_trip(self):
        p = PatientProfile(
            patient_id="p1", display_name="Pat", baseline={"CPK": 120.0},
            threshold_overrides={"hr_max_bpm": 110.0},
            monitoring_cadence=Cadence.DAILY_CHECKIN,
        )
        assert model.profile_from_record(model.to_record(p)) == p

    def test_assessment_round_trip(self):
        a = RiskAssessment(
            patient_id="p1", timestamp=5, raw_score=0.47, scaled_score=4.7,
            tier=Tier.MODERATE,
            components={"CPK_TERM": 0.25, "ALT_TERM": 0.1, "AST_TERM": 0.1, "EMG_TERM": 0.02},
        )
        assert model.assessment_from_record(model.to_record(a)) == a

    def test_alert_round_trip(self):
        a = Alert(
            alert_id="a1", patient_id="p1", rule_id="R3", severity=Severity.EMERGENCY,
            trigger_values={"cpk": 1200.0}, created_at=10,
        ).acked("dr", 20)
        assert model.alert_from_record(model.to_record(a)) == a

    def test_canonical_json_is_stable(self):
        r = model.to_record(reading())
        assert model.canonical_json(r) == model.canonical_json(dict(reversed(list(r.items()))))
