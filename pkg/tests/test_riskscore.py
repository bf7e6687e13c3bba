import pytest

from mdmon.model import (
    AlertState,
    Cadence,
    FallRecord,
    IllegalTransition,
    PatientProfile,
    Severity,
    Tier,
    default_thresholds,
)
from mdmon.riskscore import (
    HOUR_MS,
    MINUTE_MS,
    AlertBook,
    MissingInput,
    RiskInputs,
    RuleHistory,
    compute_risk,
    escalate,
    evaluate_rules,
    tier_for,
)

T = default_thresholds()
NOW = 48 * HOUR_MS


def inputs(cpk=0.0, alt=0.0, ast=0.0, emg=0.0, as_of=NOW, staleness=None):
    return RiskInputs(cpk=cpk, alt=alt, ast=ast, emg_rms=emg, as_of=as_of,
                      staleness_ms=staleness or {})


def eq1(cpk, alt, ast, emg):
    # independent hand evaluation of the published formula
    return 0.5 * cpk / 1000 + 0.25 * alt / 100 + 0.25 * ast / 100 + 0.1 * emg


class TestComputeRisk:
    def test_zero_inputs(self):
        a = compute_risk(inputs(), T)
        assert a.raw_score == 0.0
        assert a.scaled_score == 0.0
        assert a.tier is Tier.LOW

    def test_reference_magnitudes(self):
        a = compute_risk(inputs(cpk=1000, alt=100, ast=100, emg=1.0), T)
        assert a.raw_score == pytest.approx(1.1, abs=1e-12)
        assert a.scaled_score == 10.0  # clamped
        assert a.tier is Tier.HIGH

    def test_moderate_case(self):
        a = compute_risk(inputs(cpk=500, alt=40, ast=40, emg=0.2), T)
        assert a.raw_score == pytest.approx(0.47, abs=1e-12)
        assert a.scaled_score == pytest.approx(4.7, abs=1e-12)
        assert a.tier is Tier.MODERATE

    def test_components_sum_to_raw(self):
        a = compute_risk(inputs(cpk=321, alt=77, ast=55, emg=0.63), T)
        assert sum(a.components.values()) == a.raw_score

    def test_monotone_in_each_input(self):
        base = compute_risk(inputs(cpk=200, alt=30, ast=30, emg=0.5), T)
        for kw in ({"cpk": 300}, {"alt": 60}, {"ast": 60}, {"emg": 0.9}):
            bumped = compute_risk(inputs(**{"cpk": 200, "alt": 30, "ast": 30, "emg": 0.5, **kw}), T)
            assert bumped.raw_score > base.raw_score

    def test_tier_cuts_strict(self):
        eps = 1e-9
        assert tier_for(3.0, T) is Tier.LOW           # strict >
        assert tier_for(3.0 + eps, T) is Tier.MODERATE
        assert tier_for(3.0 - eps, T) is Tier.LOW
        assert tier_for(6.0, T) is Tier.MODERATE
        assert tier_for(6.0 + eps, T) is Tier.HIGH
        assert tier_for(6.0 - eps, T) is Tier.MODERATE

    def test_missing_input(self):
        with pytest.raises(MissingInput):
            compute_risk(RiskInputs(cpk=None, alt=1, ast=1, emg_rms=0.5, as_of=0), T)

    def test_stale_biomarkers_flagged(self):
        fresh = compute_risk(inputs(staleness={"cpk": 24 * HOUR_MS}), T)
        assert fresh.stale is False
        stale = compute_risk(inputs(staleness={"cpk": 49 * HOUR_MS}), T)
        assert stale.stale is True

    def test_grid_matches_hand_formula(self):
        for cpk in (0, 150, 900, 1600):
            for alt in (0, 80, 200):
                for ast in (0, 60, 150):
                    for emg in (0.0, 0.4, 1.2):
                        a = compute_risk(inputs(cpk=cpk, alt=alt, ast=ast, emg=emg), T)
                        raw = eq1(cpk, alt, ast, emg)
                        assert a.raw_score == pytest.approx(raw, abs=1e-12)
                        assert a.scaled_score == pytest.approx(
                            min(10.0, raw * 10.0), abs=1e-12)


def series(points):
    return tuple((int(ts), float(v)) for ts, v in points)


def day_series(values, end=NOW, gap=2 * HOUR_MS):
    start = end - gap * (len(values) - 1)
    return series((start + i * gap, v) for i, v in enumerate(values))


class TestRuleCatalog:
    """One positive and one boundary-negative trace per rule."""

    def run(self, **kw):
        history = RuleHistory(**kw)
        return evaluate_rules(history, T, NOW)

    def test_r1_delta(self):
        pos = self.run(cpk=day_series([150.0, 400.0, 700.0]))
        assert pos.fired("R1_CPK_DELTA_24H")
        neg = self.run(cpk=day_series([150.0, 400.0, 650.0]))  # delta exactly 500
        assert not neg.fired("R1_CPK_DELTA_24H")

    def test_r2_sustained(self):
        first_seen = {"cpk": NOW - 30 * HOUR_MS}
        pos = self.run(cpk=day_series([250.0, 300.0, 320.0]), first_seen=first_seen)
        assert pos.fired("R2_CPK_SUSTAINED")
        # a sample exactly at 200 breaks "sustained above"
        neg = self.run(cpk=day_series([250.0, 200.0, 320.0]), first_seen=first_seen)
        assert not neg.fired("R2_CPK_SUSTAINED")
        # flat at 180 fires nothing CPK-related
        flat = self.run(cpk=day_series([180.0, 180.0, 180.0]), first_seen=first_seen)
        assert not any(f.rule_id.startswith(("R1", "R2", "R3")) for f in flat.firings)

    def test_r2_needs_full_window(self):
        out = self.run(cpk=day_series([250.0, 300.0]),
                       first_seen={"cpk": NOW - 3 * HOUR_MS})
        assert "R2_CPK_SUSTAINED" in out.not_evaluated

    def test_r3_critical(self):
        assert self.run(cpk=day_series([150.0, 1000.5])).fired("R3_CPK_CRITICAL")
        assert not self.run(cpk=day_series([150.0, 1000.0])).fired("R3_CPK_CRITICAL")

    def test_r4_alt(self):
        assert self.run(alt=day_series([141.0])).fired("R4_ALT_HIGH")
        assert not self.run(alt=day_series([140.0])).fired("R4_ALT_HIGH")

    def test_r5_ast(self):
        assert self.run(ast=day_series([101.0])).fired("R5_AST_HIGH")
        assert not self.run(ast=day_series([100.0])).fired("R5_AST_HIGH")

    def test_r6_atrophy_rolling_mean(self):
        recent = series(((NOW - 4 * MINUTE_MS, 0.45), (NOW - 2 * MINUTE_MS, 0.4)))
        assert self.run(emg_rms=recent).fired("R6_EMG_ATROPHY")
        at_floor = series(((NOW - 4 * MINUTE_MS, 0.5), (NOW - 2 * MINUTE_MS, 0.5)))
        assert not self.run(emg_rms=at_floor).fired("R6_EMG_ATROPHY")
        # old windows outside 5 minutes do not count
        stale = series(((NOW - 10 * MINUTE_MS, 0.1),))
        assert "R6_EMG_ATROPHY" in self.run(emg_rms=stale).not_evaluated

    def test_r7_hrv(self):
        assert self.run(hrv=day_series([19.9])).fired("R7_HRV_LOW")
        assert not self.run(hrv=day_series([20.0])).fired("R7_HRV_LOW")

    def test_r7_urgent_variant(self):
        out = self.run(hrv=day_series([9.0]))
        firing = next(f for f in out.firings if f.rule_id == "R7_HRV_LOW")
        assert firing.severity is Severity.URGENT
        advisory = next(f for f in self.run(hrv=day_series([15.0])).firings
                        if f.rule_id == "R7_HRV_LOW")
        assert advisory.severity is Severity.ADVISORY

    def test_r8_spo2(self):
        assert self.run(spo2=day_series([89.9])).fired("R8_SPO2_LOW")
        assert not self.run(spo2=day_series([90.0])).fired("R8_SPO2_LOW")

    def test_r9_hr(self):
        assert self.run(heart_rate=day_series([120.5])).fired("R9_HR_HIGH")
        assert not self.run(heart_rate=day_series([120.0])).fired("R9_HR_HIGH")

    def test_r10_conjunction(self):
        assert self.run(temperature=day_series([31.0]),
                        humidity=day_series([75.0])).fired("R10_HEAT_HUMIDITY")
        # truth table: each conjunct alone must not fire
        assert not self.run(temperature=day_series([31.0]),
                            humidity=day_series([65.0])).fired("R10_HEAT_HUMIDITY")
        assert not self.run(temperature=day_series([30.0]),
                            humidity=day_series([75.0])).fired("R10_HEAT_HUMIDITY")

    def test_r11_sustained_exertion(self):
        first_seen = {"accel_mag": NOW - 2 * HOUR_MS}
        window = [(NOW - i * MINUTE_MS, 1.8) for i in range(29, -1, -1)]
        assert self.run(accel_mag=series(window), first_seen=first_seen) \
            .fired("R11_SUSTAINED_EXERTION")
        dip = list(window)
        dip[10] = (dip[10][0], 1.3)  # exactly at the floor breaks "above"
        assert not self.run(accel_mag=series(dip), first_seen=first_seen) \
            .fired("R11_SUSTAINED_EXERTION")

    def test_r11_needs_coverage(self):
        window = [(NOW - i * MINUTE_MS, 1.8) for i in range(5, -1, -1)]
        out = self.run(accel_mag=series(window),
                       first_seen={"accel_mag": NOW - 5 * MINUTE_MS})
        assert "R11_SUSTAINED_EXERTION" in out.not_evaluated

    def test_r12_fall(self):
        fall = FallRecord(patient_id="p1", device_id="p1-imu", timestamp=NOW - MINUTE_MS,
                          free_fall_ms=300.0, impact_g=3.0, orientation_change_deg=85.0)
        assert self.run(falls=(fall,)).fired("R12_FALL")
        old = FallRecord(patient_id="p1", device_id="p1-imu",
                         timestamp=NOW - 10 * MINUTE_MS,
                         free_fall_ms=300.0, impact_g=3.0, orientation_change_deg=85.0)
        assert not self.run(falls=(old,)).fired("R12_FALL")

    def test_order_independence(self):
        shuffled = tuple(reversed(day_series([150.0, 400.0, 700.0])))
        a = evaluate_rules(RuleHistory(cpk=day_series([150.0, 400.0, 700.0])), T, NOW)
        b = evaluate_rules(RuleHistory(cpk=shuffled), T, NOW)
        assert {f.rule_id for f in a.firings} == {f.rule_id for f in b.firings}

    def test_severities_match_catalog(self):
        out = self.run(cpk=day_series([150.0, 1200.0]), spo2=day_series([88.0]),
                       temperature=day_series([31.0]), humidity=day_series([75.0]))
        by_rule = {f.rule_id: f.severity for f in out.firings}
        assert by_rule["R3_CPK_CRITICAL"] is Severity.EMERGENCY
        assert by_rule["R8_SPO2_LOW"] is Severity.URGENT
        assert by_rule["R10_HEAT_HUMIDITY"] is Severity.ADVISORY


class TestAlertBook:
    def outcome(self, *rules, severity=None):
        from mdmon.riskscore import RULE_SEVERITY, RuleFiring, RuleOutcome
        firings = tuple(
            RuleFiring(rule_id=r, severity=severity or RULE_SEVERITY[r],
                       evidence={"value": 1.0}, window_ms=(0, 0))
            for r in rules
        )
        return RuleOutcome(firings=firings, not_evaluated=())

    def test_cooldown_dedupes(self):
        book = AlertBook(cooldown_ms=30 * MINUTE_MS)
        first = book.apply("p1", self.outcome("R8_SPO2_LOW"), NOW)
        assert [e.event for e in first] == ["created"]
        again = book.apply("p1", self.outcome("R8_SPO2_LOW"), NOW + 10 * MINUTE_MS)
        assert again == []
        assert len(book.all_alerts()) == 1

    def test_renotify_after_cooldown(self):
        book = AlertBook(cooldown_ms=30 * MINUTE_MS)
        book.apply("p1", self.outcome("R8_SPO2_LOW"), NOW)
        later = book.apply("p1", self.outcome("R8_SPO2_LOW"), NOW + 31 * MINUTE_MS)
        assert [e.event for e in later] == ["renotify"]
        assert len(book.all_alerts()) == 1

    def test_severity_escalation_renotifies(self):
        book = AlertBook()
        book.apply("p1", self.outcome("R7_HRV_LOW"), NOW)
        events = book.apply(
            "p1", self.outcome("R7_HRV_LOW", severity=Severity.URGENT), NOW + MINUTE_MS)
        assert [e.event for e in events] == ["severity"]
        assert events[0].alert.severity is Severity.URGENT

    def test_resolved_then_refire_new_id(self):
        book = AlertBook(clear_after_ms=5_000)
        created = book.apply("p1", self.outcome("R8_SPO2_LOW"), NOW)[0]
        resolved = book.apply("p1", self.outcome(), NOW + 10_000)
        assert [e.event for e in resolved] == ["resolved"]
        fresh = book.apply("p1", self.outcome("R8_SPO2_LOW"), NOW + 20_000)[0]
        assert fresh.alert.alert_id != created.alert.alert_id
        assert fresh.event == "created"

    def test_no_autoresolve_when_not_evaluated(self):
        from mdmon.riskscore import RuleOutcome
        book = AlertBook(clear_after_ms=5_000)
        book.apply("p1", self.outcome("R2_CPK_SUSTAINED"), NOW)
        out = RuleOutcome(firings=(), not_evaluated=("R2_CPK_SUSTAINED",))
        assert book.apply("p1", out, NOW + 10_000) == []
        assert book.all_alerts(AlertState.OPEN)

    def test_operator_ack_resolve(self):
        book = AlertBook()
        created = book.apply("p1", self.outcome("R3_CPK_CRITICAL"), NOW)[0]
        acked = book.ack(created.alert.alert_id, "dr-lee", NOW + 1000)
        assert acked.alert.state is AlertState.ACKED
        assert acked.alert.acked_by == "dr-lee"
        done = book.resolve(created.alert.alert_id, NOW + 2000)
        assert done.alert.state is AlertState.RESOLVED
        with pytest.raises(IllegalTransition):
            book.ack(created.alert.alert_id, "dr-lee", NOW + 3000)

    def test_fold_from_log_round_trip(self):
        from mdmon.model import to_record

        book = AlertBook()
        e1 = book.apply("p1", self.outcome("R8_SPO2_LOW"), NOW)[0]
        book.ack(e1.alert.alert_id, "dr", NOW + 500)
        log = [
            {"event": "created", "at": NOW, "alert": to_record(e1.alert)},
            {"event": "acked", "at": NOW + 500,
             "alert": to_record(book.get(e1.alert.alert_id))},
        ]
        rebuilt = AlertBook.from_log(log)
        assert rebuilt.get(e1.alert.alert_id).state is AlertState.ACKED
        # a repeat firing after recovery does not duplicate the active alert
        assert rebuilt.apply("p1", self.outcome("R8_SPO2_LOW"), NOW + 1000) == []


class TestEscalate:
    def assess(self, scaled, tier):
        from mdmon.model import RiskAssessment
        return RiskAssessment(patient_id="p1", timestamp=NOW, raw_score=scaled / 10,
                              scaled_score=scaled, tier=tier, components={})

    def test_moderate_to_daily(self):
        profile = PatientProfile(patient_id="p1")
        cadence, notes = escalate(self.assess(4.7, Tier.MODERATE), profile, NOW)
        assert cadence is Cadence.DAILY_CHECKIN
        assert len(notes) == 1
        assert set(notes[0].audience) == {"caregiver", "provider"}

    def test_high_to_continuous(self):
        profile = PatientProfile(patient_id="p1", monitoring_cadence=Cadence.DAILY_CHECKIN)
        cadence, notes = escalate(self.assess(8.0, Tier.HIGH), profile, NOW)
        assert cadence is Cadence.CONTINUOUS_WATCH
        assert notes[0].severity is Severity.EMERGENCY

    def test_never_deescalates(self):
        profile = PatientProfile(patient_id="p1", monitoring_cadence=Cadence.DAILY_CHECKIN)
        cadence, notes = escalate(self.assess(2.0, Tier.LOW), profile, NOW)
        assert cadence is Cadence.DAILY_CHECKIN
        assert notes == []

    def test_no_repeat_notification_at_same_cadence(self):
        profile = PatientProfile(patient_id="p1", monitoring_cadence=Cadence.CONTINUOUS_WATCH)
        cadence, notes = escalate(self.assess(8.0, Tier.HIGH), profile, NOW)
        assert cadence is Cadence.CONTINUOUS_WATCH
        assert notes == []
