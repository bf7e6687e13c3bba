"""Deterministic multi-sensor telemetry generator with scriptable events.

Per-device cadences: POCT biomarkers daily (plus extra draws while a
muscle-damage event is active), wearable vitals and EMG windows at their
configured rates, environment exactly every 30 simulated minutes, and
movement samples continuously with dense bursts around falls.

Baseline values wander with small truncated Gaussian noise sized so that
an event-free scenario never crosses an alert threshold. While an event
shapes a metric, samples follow the event's closed-form curve exactly, so
tests can evaluate the same curve independently.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Mapping

import numpy as np

from . import dsp
from .clock import Clock, ManualClock, PacedClock
from .model import (
    MetricKind,
    PatientProfile,
    Quality,
    SensorReading,
    profile_from_record,
    to_record,
)

HOUR_MS = 3_600_000
DAY_MS = 24 * HOUR_MS


class InvalidScenario(ValueError):
    code = "INVALID_SCENARIO"


class SinkClosed(RuntimeError):
    code = "SINK_CLOSED"


class EventKind(str, Enum):
    MUSCLE_DAMAGE = "MUSCLE_DAMAGE"
    DESATURATION = "DESATURATION"
    HEAT_STRESS = "HEAT_STRESS"
    ATROPHY_TREND = "ATROPHY_TREND"
    FALL = "FALL"
    SUSTAINED_EXERTION = "SUSTAINED_EXERTION"


@dataclass(frozen=True)
class CadenceConfig:
    vitals_interval_s: int = 60
    emg_interval_s: int = 300
    env_interval_s: int = 1800          # every 30 simulated minutes
    accel_interval_s: int = 30
    poct_event_interval_s: int = 7200   # extra biomarker draws while damage is active
    emg_sample_rate_hz: int = 1000
    window_samples: int = 1024
    burst_rate_hz: int = 100
    burst_seconds: float = 8.0


@dataclass(frozen=True)
class ScenarioEvent:
    kind: EventKind
    patient_id: str
    start_hours: float
    duration_hours: float
    params: Mapping[str, float] = field(default_factory=dict)

    @property
    def start_ms(self) -> int:
        return int(self.start_hours * HOUR_MS)

    @property
    def end_ms(self) -> int:
        return int((self.start_hours + self.duration_hours) * HOUR_MS)


@dataclass(frozen=True)
class Scenario:
    seed: int
    duration_hours: float
    patients: tuple[PatientProfile, ...]
    events: tuple[ScenarioEvent, ...] = ()
    cadence: CadenceConfig = CadenceConfig()

    def validate(self) -> "Scenario":
        ids = {p.patient_id for p in self.patients}
        if len(ids) != len(self.patients):
            raise InvalidScenario("duplicate patient ids")
        if self.duration_hours <= 0:
            raise InvalidScenario("duration must be positive")
        end = self.duration_hours * HOUR_MS
        for ev in self.events:
            if ev.patient_id not in ids:
                raise InvalidScenario(f"event references unknown patient {ev.patient_id!r}")
            if ev.start_hours < 0 or ev.duration_hours <= 0 or ev.end_ms > end:
                raise InvalidScenario(
                    f"{ev.kind.value} window [{ev.start_hours}, "
                    f"{ev.start_hours + ev.duration_hours}] h outside scenario duration"
                )
            _curve_for(ev, _DEFAULT_BASELINES)  # parameter sanity
        return self


# default baselines when the profile does not pin a metric
_DEFAULT_BASELINES = {
    MetricKind.CPK: 120.0,
    MetricKind.ALT: 30.0,
    MetricKind.AST: 28.0,
    MetricKind.EMG_AMPLITUDE: 0.8,
    MetricKind.HEART_RATE: 72.0,
    MetricKind.HRV: 45.0,
    MetricKind.SPO2: 97.0,
    MetricKind.RESP_RATE: 14.0,
    MetricKind.TEMPERATURE: 22.0,
    MetricKind.HUMIDITY: 45.0,
}

# per-metric noise sigma; +-3 sigma stays clear of every default threshold
_SIGMA = {
    MetricKind.CPK: 8.0,
    MetricKind.ALT: 2.0,
    MetricKind.AST: 2.0,
    MetricKind.EMG_AMPLITUDE: 0.02,
    MetricKind.HEART_RATE: 2.0,
    MetricKind.SPO2: 0.5,
    MetricKind.RESP_RATE: 1.0,
    MetricKind.TEMPERATURE: 0.3,
    MetricKind.HUMIDITY: 2.0,
}

_CLAMP = {
    MetricKind.SPO2: (0.0, 100.0),
    MetricKind.HUMIDITY: (0.0, 100.0),
}


def _baseline(profile: PatientProfile, metric: MetricKind) -> float:
    return float(profile.baseline.get(metric.value, _DEFAULT_BASELINES[metric]))


# --------------------------------------------------------------------------
# event curves (closed-form, evaluable independently by tests)
# --------------------------------------------------------------------------

def _ramp_decay(base: float, peak: float, start: int, end: int, ramp_fraction: float):
    """Linear ramp to the peak, then exponential decay back toward base."""
    t_peak = start + ramp_fraction * (end - start)
    half_life = max(1.0, (end - t_peak) / 2.0)

    def curve(t: float) -> float:
        if t <= start or t > end:
            return base
        if t <= t_peak:
            return base + (peak - base) * (t - start) / (t_peak - start)
        return base + (peak - base) * math.exp(-math.log(2.0) * (t - t_peak) / half_life)

    return curve, int(t_peak)


def _triangle(base: float, extreme: float, start: int, end: int):
    def curve(t: float) -> float:
        if t <= start or t >= end:
            return base
        frac = 1.0 - abs(2.0 * (t - start) / (end - start) - 1.0)
        return base + (extreme - base) * frac

    return curve


def _trapezoid(base: float, extreme: float, start: int, end: int, shoulder: float = 0.25):
    rise = start + shoulder * (end - start)
    fall = end - shoulder * (end - start)

    def curve(t: float) -> float:
        if t <= start or t >= end:
            return base
        if t < rise:
            return base + (extreme - base) * (t - start) / (rise - start)
        if t <= fall:
            return extreme
        return base + (extreme - base) * (end - t) / (end - fall)

    return curve


def muscle_damage_curves(ev: ScenarioEvent, baselines: Mapping[MetricKind, float]):
    """CPK ramp/decay with proportional ALT/AST co-elevation.

    Returns ({metric: curve}, t_peak_ms). The CPK curve attains its peak
    value exactly once, at t_peak_ms.
    """
    peak = float(ev.params.get("peak_cpk", 1500.0))
    ramp_fraction = float(ev.params.get("ramp_fraction", 0.67))
    base_cpk = baselines[MetricKind.CPK]
    if not base_cpk < peak <= 50_000:
        raise InvalidScenario(f"peak_cpk {peak} must exceed baseline and stay physical")
    cpk, t_peak = _ramp_decay(base_cpk, peak, ev.start_ms, ev.end_ms, ramp_fraction)
    alt_peak = float(ev.params.get("alt_peak", baselines[MetricKind.ALT] + 0.05 * (peak - base_cpk)))
    ast_peak = float(ev.params.get("ast_peak", baselines[MetricKind.AST] + 0.045 * (peak - base_cpk)))
    alt, _ = _ramp_decay(baselines[MetricKind.ALT], alt_peak, ev.start_ms, ev.end_ms, ramp_fraction)
    ast, _ = _ramp_decay(baselines[MetricKind.AST], ast_peak, ev.start_ms, ev.end_ms, ramp_fraction)
    return {MetricKind.CPK: cpk, MetricKind.ALT: alt, MetricKind.AST: ast}, t_peak


def _curve_for(ev: ScenarioEvent, baselines: Mapping[MetricKind, float]):
    """Metric curves for one event; raises InvalidScenario on bad magnitudes."""
    if ev.kind is EventKind.MUSCLE_DAMAGE:
        curves, _ = muscle_damage_curves(ev, baselines)
        return curves
    if ev.kind is EventKind.DESATURATION:
        floor = float(ev.params.get("min_spo2", 85.0))
        rise = float(ev.params.get("hr_rise", 30.0))
        if not 0.0 <= floor < baselines[MetricKind.SPO2]:
            raise InvalidScenario(f"min_spo2 {floor} not physically possible")
        return {
            MetricKind.SPO2: _triangle(baselines[MetricKind.SPO2], floor, ev.start_ms, ev.end_ms),
            MetricKind.HEART_RATE: _triangle(
                baselines[MetricKind.HEART_RATE],
                min(299.0, baselines[MetricKind.HEART_RATE] + rise),
                ev.start_ms, ev.end_ms,
            ),
        }
    if ev.kind is EventKind.HEAT_STRESS:
        temp = float(ev.params.get("peak_temp", 33.0))
        hum = float(ev.params.get("peak_humidity", 80.0))
        if temp > 60.0 or hum > 100.0:
            raise InvalidScenario("heat stress magnitudes outside physical range")
        return {
            MetricKind.TEMPERATURE: _trapezoid(
                baselines[MetricKind.TEMPERATURE], temp, ev.start_ms, ev.end_ms),
            MetricKind.HUMIDITY: _trapezoid(
                baselines[MetricKind.HUMIDITY], hum, ev.start_ms, ev.end_ms),
        }
    if ev.kind is EventKind.ATROPHY_TREND:
        target = float(ev.params.get("target_rms", 0.3))
        if not 0.0 < target <= 20.0:
            raise InvalidScenario(f"target_rms {target} outside physical range")
        base = baselines[MetricKind.EMG_AMPLITUDE]
        start, end = ev.start_ms, ev.end_ms

        def emg_curve(t: float) -> float:
            if t <= start:
                return base
            frac = min(1.0, (t - start) / (end - start))
            return base + (target - base) * frac

        return {MetricKind.EMG_AMPLITUDE: emg_curve}
    if ev.kind is EventKind.FALL:
        impact = float(ev.params.get("impact_g", 3.0))
        if not 2.5 <= impact <= 16.0:
            raise InvalidScenario(f"impact_g {impact} must be in [2.5, 16]")
        return {}
    if ev.kind is EventKind.SUSTAINED_EXERTION:
        mag = float(ev.params.get("magnitude_g", 1.8))
        if not 1.0 < mag <= 10.0:
            raise InvalidScenario(f"magnitude_g {mag} must be in (1, 10]")
        return {}
    raise InvalidScenario(f"unknown event kind {ev.kind}")


# --------------------------------------------------------------------------
# generation
# --------------------------------------------------------------------------

class _DeviceCounter:
    def __init__(self):
        self._seq: dict[str, int] = {}

    def next(self, device_id: str) -> int:
        n = self._seq.get(device_id, 0) + 1
        self._seq[device_id] = n
        return n


def generate(scenario: Scenario) -> list[SensorReading]:
    """Pure function of the scenario: identical input, bit-identical output.

    Readings come back sorted by (timestamp, device_id, seq).
    """
    scenario.validate()
    out: list[SensorReading] = []
    for idx, profile in enumerate(sorted(scenario.patients, key=lambda p: p.patient_id)):
        out.extend(_patient_stream(scenario, profile, idx))
    out.sort(key=lambda r: (r.timestamp, r.device_id, r.seq))
    return out


def _rng(scenario: Scenario, patient_idx: int, channel: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(entropy=scenario.seed, spawn_key=(patient_idx, channel))
    )


def _noisy(rng, base: float, metric: MetricKind) -> float:
    sigma = _SIGMA[metric]
    v = base + float(np.clip(rng.normal(0.0, sigma), -3.0 * sigma, 3.0 * sigma))
    lo, hi = _CLAMP.get(metric, (None, None))
    if lo is not None:
        v = min(max(v, lo), hi)
    return v


def _patient_stream(scenario: Scenario, profile: PatientProfile, idx: int):
    cad = scenario.cadence
    end_ms = int(scenario.duration_hours * HOUR_MS)
    pid = profile.patient_id
    baselines = {m: _baseline(profile, m) for m in _DEFAULT_BASELINES}
    events = [ev for ev in scenario.events if ev.patient_id == pid]
    seq = _DeviceCounter()
    readings: list[SensorReading] = []

    # merged metric curves; later events override earlier on the same metric
    curves: dict[MetricKind, Callable[[float], float]] = {}
    damage_windows: list[tuple[int, int, int]] = []  # (start, end, t_peak)
    for ev in events:
        if ev.kind is EventKind.MUSCLE_DAMAGE:
            evc, t_peak = muscle_damage_curves(ev, baselines)
            damage_windows.append((ev.start_ms, ev.end_ms, t_peak))
            curves.update(evc)
        else:
            curves.update(_curve_for(ev, baselines))

    def value_at(metric: MetricKind, t: int, rng) -> float:
        curve = curves.get(metric)
        if curve is not None and curve(t) != baselines[metric]:
            return curve(t)  # event samples are exact curve evaluations
        return _noisy(rng, baselines[metric], metric)

    def add(device: str, metric: MetricKind, value, t: int):
        readings.append(SensorReading(
            patient_id=pid, device_id=device, metric=metric, value=value,
            timestamp=t, seq=seq.next(device), quality=Quality.OK,
        ))

    # POCT biomarkers: daily grid plus event-driven draws
    poct_rng = _rng(scenario, idx, 0)
    poct_times = set(range(0, end_ms, DAY_MS))
    for start, end, t_peak in damage_windows:
        poct_times.add(start)
        poct_times.add(min(t_peak, end_ms))
        poct_times.update(range(start, min(end, end_ms), cad.poct_event_interval_s * 1000))
    device = f"{pid}-poct"
    for t in sorted(poct_times):
        for metric in (MetricKind.CPK, MetricKind.ALT, MetricKind.AST):
            add(device, metric, value_at(metric, t, poct_rng), t)

    # wearable vitals
    vit_rng = _rng(scenario, idx, 1)
    device = f"{pid}-ppg"
    for t in range(0, end_ms, cad.vitals_interval_s * 1000):
        hr = value_at(MetricKind.HEART_RATE, t, vit_rng)
        add(device, MetricKind.HEART_RATE, hr, t)
        add(device, MetricKind.SPO2, value_at(MetricKind.SPO2, t, vit_rng), t)
        add(device, MetricKind.RESP_RATE, value_at(MetricKind.RESP_RATE, t, vit_rng), t)
        # RR intervals alternate +-target/2 around the HR mean, so the RMSSD
        # statistic equals the scripted HRV target by construction
        target = baselines[MetricKind.HRV]
        mean_rr = 60_000.0 / hr
        rr = [mean_rr + (target / 2.0 if i % 2 else -target / 2.0) for i in range(16)]
        add(device, MetricKind.HRV, dsp.hrv_rmssd(rr), t)

    # EMG windows
    emg_rng = _rng(scenario, idx, 2)
    device = f"{pid}-emg"
    for t in range(0, end_ms, cad.emg_interval_s * 1000):
        target_rms = value_at(MetricKind.EMG_AMPLITUDE, t, emg_rng)
        target_rms = max(0.01, target_rms)
        window = _band_noise(emg_rng, cad.window_samples, cad.emg_sample_rate_hz, target_rms)
        add(device, MetricKind.EMG_WAVEFORM, tuple(float(v) for v in window), t)

    # environment, exactly every 30 simulated minutes
    env_rng = _rng(scenario, idx, 3)
    device = f"{pid}-env"
    for t in range(0, end_ms, cad.env_interval_s * 1000):
        add(device, MetricKind.TEMPERATURE, value_at(MetricKind.TEMPERATURE, t, env_rng), t)
        add(device, MetricKind.HUMIDITY, value_at(MetricKind.HUMIDITY, t, env_rng), t)

    # movement: sparse ambient samples plus dense fall bursts
    imu_rng = _rng(scenario, idx, 4)
    device = f"{pid}-imu"
    exertion = [(ev.start_ms, ev.end_ms, float(ev.params.get("magnitude_g", 1.8)))
                for ev in events if ev.kind is EventKind.SUSTAINED_EXERTION]
    falls = [ev for ev in events if ev.kind is EventKind.FALL]
    burst_spans = [(ev.start_ms, ev.start_ms + int(cad.burst_seconds * 1000)) for ev in falls]
    for t in range(0, end_ms, cad.accel_interval_s * 1000):
        if any(lo <= t < hi for lo, hi in burst_spans):
            continue  # the burst covers this instant densely
        mag = 1.0
        for lo, hi, m in exertion:
            if lo <= t < hi:
                mag = m
        jitter = imu_rng.normal(0.0, 0.02, size=3)
        vec = np.array([0.0, 0.0, mag]) + jitter
        vec *= mag / max(1e-9, float(np.linalg.norm(vec)))
        add(device, MetricKind.ACCEL, tuple(float(v) for v in vec), t)
    for ev in falls:
        impact = float(ev.params.get("impact_g", 3.0))
        for offset_ms, acc, gyro in _fall_burst(cad.burst_rate_hz, cad.burst_seconds, impact):
            t = ev.start_ms + offset_ms
            if t >= end_ms:
                break
            add(device, MetricKind.ACCEL, acc, t)
            add(device, MetricKind.GYRO, gyro, t)

    readings.sort(key=lambda r: (r.timestamp, r.device_id, r.seq))
    return readings


def _band_noise(rng, n: int, fs: float, target_rms: float,
                lo: float = 20.0, hi: float = 150.0) -> np.ndarray:
    """Gaussian noise band-limited to [lo, hi] Hz, scaled to an exact RMS."""
    freqs = np.arange(n // 2 + 1) * fs / n
    band = (freqs >= lo) & (freqs <= hi)
    spectrum = np.zeros(n // 2 + 1, dtype=np.complex128)
    k = int(band.sum())
    spectrum[band] = rng.normal(size=k) + 1j * rng.normal(size=k)
    x = np.fft.irfft(spectrum, n)
    rms = math.sqrt(float(np.mean(x * x)))
    return x * (target_rms / rms) if rms > 0 else x


def _fall_burst(rate_hz: int, seconds: float, impact_g: float):
    """Scripted fall signature: upright, free fall, impact, lying still."""
    step_ms = 1000.0 / rate_hz
    n = int(seconds * rate_hz)
    for i in range(n):
        t = i / rate_hz
        if t < 2.0:
            acc, gyro = (0.0, 0.0, 1.0), (0.0, 0.0, 0.0)
        elif t < 2.3:
            acc, gyro = (0.0, 0.0, 0.05), (0.0, 150.0, 0.0)
        elif t < 2.35:
            acc, gyro = (impact_g, 0.0, 1.0), (0.0, 80.0, 0.0)
        else:
            acc, gyro = (1.0, 0.0, 0.05), (0.0, 0.0, 0.0)
        yield int(round(i * step_ms)), acc, gyro


# --------------------------------------------------------------------------
# emission
# --------------------------------------------------------------------------

def emit(
    stream: Iterable[SensorReading],
    speed: float,
    sink: Callable[[SensorReading], None],
    clock: Clock | None = None,
) -> int:
    """Deliver readings to the sink in timestamp order.

    `speed` scales simulated time onto the clock: pacing never runs slower
    than speed x real time, and an infinite speed means batch delivery.
    Ties are broken by (device_id, seq). Returns the count delivered.
    """
    if speed <= 0:
        raise ValueError("speed must be positive")
    readings = sorted(stream, key=lambda r: (r.timestamp, r.device_id, r.seq))
    if clock is None:
        clock = ManualClock() if math.isinf(speed) else PacedClock(speed)
    delivered = 0
    for r in readings:
        if r.timestamp > clock.now_ms():
            clock.sleep_ms(r.timestamp - clock.now_ms())
        try:
            sink(r)
        except SinkClosed:
            raise
        except Exception as exc:
            raise SinkClosed(f"sink rejected reading: {exc}") from exc
        delivered += 1
    return delivered


# --------------------------------------------------------------------------
# scenario files
# --------------------------------------------------------------------------

def scenario_from_record(d: Mapping) -> Scenario:
    cadence = CadenceConfig(**d.get("cadence", {}))
    return Scenario(
        seed=int(d["seed"]),
        duration_hours=float(d["duration_hours"]),
        patients=tuple(profile_from_record(p) for p in d["patients"]),
        events=tuple(
            ScenarioEvent(
                kind=EventKind(e["kind"]),
                patient_id=e["patient_id"],
                start_hours=float(e["start_hours"]),
                duration_hours=float(e["duration_hours"]),
                params={k: float(v) for k, v in e.get("params", {}).items()},
            )
            for e in d.get("events", ())
        ),
        cadence=cadence,
    ).validate()


def load_scenario(path: str, seed_override: int | None = None) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        record = json.load(fh)
    if seed_override is not None:
        record["seed"] = seed_override
    return scenario_from_record(record)


def scenario_to_record(s: Scenario) -> dict:
    return {
        "seed": s.seed,
        "duration_hours": s.duration_hours,
        "patients": [to_record(p) for p in s.patients],
        "events": [
            {
                "kind": ev.kind.value,
                "patient_id": ev.patient_id,
                "start_hours": ev.start_hours,
                "duration_hours": ev.duration_hours,
                "params": dict(ev.params),
            }
            for ev in s.events
        ],
        "cadence": {
            "vitals_interval_s": s.cadence.vitals_interval_s,
            "emg_interval_s": s.cadence.emg_interval_s,
            "env_interval_s": s.cadence.env_interval_s,
            "accel_interval_s": s.cadence.accel_interval_s,
            "poct_event_interval_s": s.cadence.poct_event_interval_s,
            "emg_sample_rate_hz": s.cadence.emg_sample_rate_hz,
            "window_samples": s.cadence.window_samples,
            "burst_rate_hz": s.cadence.burst_rate_hz,
            "burst_seconds": s.cadence.burst_seconds,
        },
    }
