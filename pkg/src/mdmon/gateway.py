"""Edge gateway: validate, preprocess, prioritize, encrypt, store-and-forward.

Envelopes ride AES-256-GCM with a counter-derived nonce; the wire layout
is version(1) || gateway uuid(16) || counter(8, big-endian) || nonce(12) ||
ciphertext+tag, with the 25-byte header authenticated as associated data.
Delivery is at-least-once with receiver-side dedupe, Wi-Fi to cellular
failover, and jittered exponential backoff (monotone up to the cap).
The local queue is an append-only file plus an acknowledgment journal, so
a crash between enqueue and delivery loses nothing.
"""

from __future__ import annotations

import json
import os
import random
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Iterable, Mapping

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from . import dsp
from .clock import Clock
from .model import (
    EmgFeatureRecord,
    FallRecord,
    MetricKind,
    ReadingRejected,
    ReadingValidator,
    SensorReading,
    canonical_json,
    fall_from_record,
    feature_from_record,
    reading_from_record,
    to_record,
)

WIRE_VERSION = 0x01
HEADER_LEN = 1 + 16 + 8
NONCE_LEN = 12

CPK_CRITICAL_UL = 1000.0
SPO2_CRITICAL_PCT = 90.0


class Priority(str, Enum):
    CRITICAL = "CRITICAL"
    ROUTINE = "ROUTINE"


class AuthFailed(ValueError):
    code = "AUTH_FAILED"


class BadKeyLength(ValueError):
    code = "BAD_KEY_LENGTH"


class Malformed(ValueError):
    code = "MALFORMED"


class QueueFull(RuntimeError):
    code = "QUEUE_FULL"


class DurabilityError(OSError):
    code = "DURABILITY_ERROR"


class LinkDown(ConnectionError):
    """The attempted link could not deliver the envelope."""


class AckLost(ConnectionError):
    """The envelope reached the receiver but the acknowledgment was lost."""


Record = SensorReading | EmgFeatureRecord | FallRecord


@dataclass(frozen=True)
class UploadEnvelope:
    envelope_id: str          # "<gateway hex>:<counter>"
    gateway_id: str           # 32-char hex uuid
    priority: Priority
    records: tuple[Record, ...]
    created_at: int

    @property
    def counter(self) -> int:
        return int(self.envelope_id.rsplit(":", 1)[1])


@dataclass(frozen=True)
class LinkState:
    active_link: str          # WIFI | CELLULAR | DOWN
    since: int


def _record_to_dict(rec: Record) -> dict:
    if isinstance(rec, SensorReading):
        return {"kind": "reading", **to_record(rec)}
    if isinstance(rec, EmgFeatureRecord):
        return {"kind": "emg_features", **to_record(rec)}
    if isinstance(rec, FallRecord):
        return {"kind": "fall", **to_record(rec)}
    raise TypeError(f"unsupported record type {type(rec)!r}")


def _record_from_dict(d: Mapping) -> Record:
    kind = d.get("kind")
    if kind == "reading":
        return reading_from_record(d)
    if kind == "emg_features":
        return feature_from_record(d)
    if kind == "fall":
        return fall_from_record(d)
    raise Malformed(f"unknown record kind {kind!r}")


def envelope_to_dict(env: UploadEnvelope) -> dict:
    return {
        "envelope_id": env.envelope_id,
        "gateway_id": env.gateway_id,
        "priority": env.priority.value,
        "created_at": env.created_at,
        "records": [_record_to_dict(r) for r in env.records],
    }


def envelope_from_dict(d: Mapping) -> UploadEnvelope:
    return UploadEnvelope(
        envelope_id=d["envelope_id"],
        gateway_id=d["gateway_id"],
        priority=Priority(d["priority"]),
        records=tuple(_record_from_dict(r) for r in d["records"]),
        created_at=int(d["created_at"]),
    )


# --------------------------------------------------------------------------
# AEAD sealing
# --------------------------------------------------------------------------

def _check_key(key: bytes) -> bytes:
    if not isinstance(key, (bytes, bytearray)) or len(key) != 32:
        raise BadKeyLength("gateway key must be exactly 32 bytes")
    return bytes(key)


def _nonce_for(gateway_bytes: bytes, counter: int) -> bytes:
    # 4 gateway-derived bytes + the 8-byte counter: unique per (key, envelope)
    return gateway_bytes[:4] + counter.to_bytes(8, "big")


def seal(envelope: UploadEnvelope, key: bytes) -> bytes:
    """Encrypt an envelope into its wire form."""
    key = _check_key(key)
    gateway_bytes = bytes.fromhex(envelope.gateway_id)
    if len(gateway_bytes) != 16:
        raise Malformed("gateway_id must be a 32-char hex uuid")
    counter = envelope.counter
    header = bytes([WIRE_VERSION]) + gateway_bytes + counter.to_bytes(8, "big")
    nonce = _nonce_for(gateway_bytes, counter)
    plaintext = canonical_json(envelope_to_dict(envelope)).encode()
    ciphertext = AESGCM(key).encrypt(nonce, plaintext, header)
    return header + nonce + ciphertext


def parse_header(wire: bytes) -> tuple[str, int, bytes, bytes]:
    """Split a wire envelope into (gateway hex, counter, nonce, ciphertext)."""
    if len(wire) < HEADER_LEN + NONCE_LEN + 16:
        raise Malformed("wire envelope too short")
    if wire[0] != WIRE_VERSION:
        raise Malformed(f"unsupported wire version {wire[0]}")
    gateway_hex = wire[1:17].hex()
    counter = int.from_bytes(wire[17:25], "big")
    nonce = wire[25:25 + NONCE_LEN]
    return gateway_hex, counter, nonce, wire[HEADER_LEN + NONCE_LEN:]


def open_envelope(wire: bytes, key_lookup: Callable[[str], bytes | None]) -> UploadEnvelope:
    """Authenticate and decrypt a wire envelope.

    Any bit flip in header, nonce, ciphertext, or tag fails authentication.
    """
    gateway_hex, counter, nonce, ciphertext = parse_header(wire)
    key = key_lookup(gateway_hex)
    if key is None:
        raise AuthFailed(f"no key for gateway {gateway_hex}")
    header = wire[:HEADER_LEN]
    try:
        plaintext = AESGCM(_check_key(key)).decrypt(nonce, ciphertext, header)
    except InvalidTag as exc:
        raise AuthFailed("envelope failed authentication") from exc
    try:
        env = envelope_from_dict(json.loads(plaintext))
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        raise Malformed(f"envelope payload invalid: {exc}") from exc
    if env.gateway_id != gateway_hex or env.counter != counter:
        raise AuthFailed("envelope identity does not match its header")
    return env


# --------------------------------------------------------------------------
# durable priority queue
# --------------------------------------------------------------------------

class DurableQueue:
    """Append-only envelope log with an acknowledgment watermark journal.

    CRITICAL envelopes dequeue before any ROUTINE envelope; FIFO within a
    class. Enqueued lines are fsynced before the call returns.
    """

    QUEUE_FILE = "queue.jsonl"
    ACKS_FILE = "acks.jsonl"

    def __init__(self, queue_dir: str, bound: int = 10_000):
        self.queue_dir = queue_dir
        self.bound = bound
        os.makedirs(queue_dir, exist_ok=True)
        self._critical: deque[UploadEnvelope] = deque()
        self._routine: deque[UploadEnvelope] = deque()
        self._pending_ids: set[str] = set()
        self.max_counter = 0
        self._load()
        self._queue_fh = open(os.path.join(queue_dir, self.QUEUE_FILE), "a", encoding="utf-8")
        self._acks_fh = open(os.path.join(queue_dir, self.ACKS_FILE), "a", encoding="utf-8")

    def _load(self) -> None:
        acked: set[str] = set()
        for line in self._lines(self.ACKS_FILE):
            acked.add(line["envelope_id"])
        for line in self._lines(self.QUEUE_FILE):
            env = envelope_from_dict(line["envelope"])
            self.max_counter = max(self.max_counter, env.counter)
            if env.envelope_id in acked or env.envelope_id in self._pending_ids:
                continue
            self._pending_ids.add(env.envelope_id)
            (self._critical if env.priority is Priority.CRITICAL else self._routine).append(env)

    def _lines(self, fname: str) -> Iterable[dict]:
        path = os.path.join(self.queue_dir, fname)
        if not os.path.exists(path):
            return
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    yield json.loads(line)
                except json.JSONDecodeError:
                    continue  # torn tail write from a crash

    def enqueue(self, envelope: UploadEnvelope) -> None:
        if self.pending_count() >= self.bound:
            raise QueueFull(f"queue at bound {self.bound}; retry later")
        try:
            self._queue_fh.write(
                canonical_json({"envelope": envelope_to_dict(envelope)}) + "\n")
            self._queue_fh.flush()
            os.fsync(self._queue_fh.fileno())
        except OSError as exc:
            raise DurabilityError(f"queue persistence failed: {exc}") from exc
        self.max_counter = max(self.max_counter, envelope.counter)
        self._pending_ids.add(envelope.envelope_id)
        (self._critical if envelope.priority is Priority.CRITICAL else self._routine) \
            .append(envelope)

    def peek(self) -> UploadEnvelope | None:
        if self._critical:
            return self._critical[0]
        if self._routine:
            return self._routine[0]
        return None

    def mark_delivered(self, envelope_id: str) -> None:
        try:
            self._acks_fh.write(canonical_json({"envelope_id": envelope_id}) + "\n")
            self._acks_fh.flush()
            os.fsync(self._acks_fh.fileno())
        except OSError as exc:
            raise DurabilityError(f"ack persistence failed: {exc}") from exc
        self._pending_ids.discard(envelope_id)
        for q in (self._critical, self._routine):
            if q and q[0].envelope_id == envelope_id:
                q.popleft()
                return
        # delivered out of head position (should not happen; keep queues sane)
        for q in (self._critical, self._routine):
            for env in list(q):
                if env.envelope_id == envelope_id:
                    q.remove(env)
                    return

    def pending_count(self) -> int:
        return len(self._critical) + len(self._routine)

    def close(self) -> None:
        self._queue_fh.close()
        self._acks_fh.close()


# --------------------------------------------------------------------------
# preprocessing
# --------------------------------------------------------------------------

def is_critical(reading: SensorReading) -> bool:
    """Immediate-attention trigger: CPK above 1000 U/L or SpO2 under 90%."""
    if reading.value is None or isinstance(reading.value, tuple):
        return False
    if reading.metric is MetricKind.CPK:
        return reading.value > CPK_CRITICAL_UL
    if reading.metric is MetricKind.SPO2:
        return reading.value < SPO2_CRITICAL_PCT
    return False


@dataclass
class PreprocessResult:
    records: list[Record]
    critical: list[Record]
    rejected: list[tuple[SensorReading, str]]   # (reading, rejection code)


class Preprocessor:
    """Stateful batch preprocessing: EMG compression and fall detection.

    EMG windows become feature records (raw samples kept only on a spike,
    to bound uplink bandwidth). Dense accelerometer runs are scanned for
    the fall signature; sparse ambient samples pass through untouched.
    """

    BURST_GAP_MS = 1000
    MIN_BURST_SAMPLES = 64

    def __init__(self, window_samples: int = 1024, emg_sample_rate: float = 1000.0,
                 spike_factor: float = 3.0):
        self.validator = ReadingValidator(window_samples)
        self.emg_sample_rate = emg_sample_rate
        self.spike_factor = spike_factor
        self._extractors: dict[str, dsp.EmgFeatureExtractor] = {}
        self._accel_runs: dict[str, list[SensorReading]] = {}
        self._seen_falls: set[tuple[str, int]] = set()

    def process(self, batch: Iterable[SensorReading]) -> PreprocessResult:
        result = PreprocessResult(records=[], critical=[], rejected=[])
        for reading in batch:
            try:
                self.validator.validate(reading)
            except ReadingRejected as exc:
                result.rejected.append((reading, exc.code))
                continue
            if reading.metric is MetricKind.EMG_WAVEFORM:
                result.records.append(self._compress_emg(reading))
            elif reading.metric is MetricKind.ACCEL:
                result.records.append(reading)
                self._track_accel(reading, result)
            else:
                target = result.critical if is_critical(reading) else result.records
                target.append(reading)
        self._flush_idle_runs(result)
        return result

    def _compress_emg(self, reading: SensorReading) -> Record:
        extractor = self._extractors.get(reading.patient_id)
        if extractor is None:
            extractor = dsp.EmgFeatureExtractor(self.emg_sample_rate, self.spike_factor)
            self._extractors[reading.patient_id] = extractor
        feats = extractor.extract(reading.value)
        return EmgFeatureRecord(
            patient_id=reading.patient_id,
            device_id=reading.device_id,
            seq=reading.seq,
            timestamp=reading.timestamp,
            rms_mv=feats.rms_mv,
            dominant_hz=feats.dominant_hz,
            band_power_ratio=feats.band_power_ratio,
            spike_flag=feats.spike_flag,
            raw_mv=reading.value if feats.spike_flag else None,
        )

    def _track_accel(self, reading: SensorReading, result: PreprocessResult) -> None:
        run = self._accel_runs.setdefault(reading.device_id, [])
        if run and reading.timestamp - run[-1].timestamp > self.BURST_GAP_MS:
            self._scan_run(run, result)
            run.clear()
        run.append(reading)

    def _flush_idle_runs(self, result: PreprocessResult) -> None:
        # a burst may straddle batch windows: scan what is buffered so far
        # but keep accumulating, trimmed to a bounded trailing span
        for run in self._accel_runs.values():
            if len(run) >= self.MIN_BURST_SAMPLES:
                self._scan_run(run, result)
                cutoff = run[-1].timestamp - 30_000
                while run and run[0].timestamp < cutoff:
                    run.pop(0)

    def _scan_run(self, run: list[SensorReading], result: PreprocessResult) -> None:
        if len(run) < self.MIN_BURST_SAMPLES:
            return
        gaps = [b.timestamp - a.timestamp for a, b in zip(run, run[1:])]
        gaps = [g for g in gaps if g > 0]
        step_ms = sorted(gaps)[len(gaps) // 2] if gaps else 10
        rate = 1000.0 / step_ms
        event = dsp.detect_fall([r.value for r in run], rate,
                                start_ts_ms=run[0].timestamp)
        if event is None:
            return
        key = (run[0].device_id, event.impact_ts_ms)
        if key in self._seen_falls:
            return
        self._seen_falls.add(key)
        result.critical.append(FallRecord(
            patient_id=run[0].patient_id,
            device_id=run[0].device_id,
            timestamp=event.impact_ts_ms,
            free_fall_ms=event.free_fall_ms,
            impact_g=event.impact_g,
            orientation_change_deg=event.orientation_change_deg,
        ))


# --------------------------------------------------------------------------
# transports
# --------------------------------------------------------------------------

class InProcessTransport:
    """Directly invokes a receiver callable: wire bytes -> {"ack": id}."""

    def __init__(self, handler: Callable[[bytes], Mapping[str, Any]]):
        self.handler = handler

    def send(self, wire: bytes) -> str:
        try:
            response = self.handler(wire)
        except (AuthFailed, Malformed):
            raise
        except Exception as exc:
            raise LinkDown(f"receiver unavailable: {exc}") from exc
        return str(response["ack"])


class HttpTransport:
    """POSTs wire envelopes to the cloud ingest endpoint."""

    def __init__(self, base_url: str, client=None):
        import httpx

        self.base_url = base_url.rstrip("/")
        self.client = client or httpx.Client(timeout=10.0)

    def send(self, wire: bytes) -> str:
        import httpx

        try:
            response = self.client.post(
                f"{self.base_url}/ingest", content=wire,
                headers={"content-type": "application/octet-stream"},
            )
        except httpx.HTTPError as exc:
            raise LinkDown(str(exc)) from exc
        if response.status_code == 401:
            raise AuthFailed("receiver rejected envelope authentication")
        if response.status_code != 200:
            raise LinkDown(f"ingest returned {response.status_code}")
        return str(response.json()["ack"])


@dataclass
class FaultSchedule:
    """Scripted failures for one transport, evaluated per send attempt."""

    outages: list[tuple[int, int]] = field(default_factory=list)  # [from_ms, to_ms)
    drop_requests: set[int] = field(default_factory=set)   # attempt indices, not delivered
    drop_acks: set[int] = field(default_factory=set)       # delivered, ack lost


class FaultyTransport:
    """Wraps a transport with a deterministic fault schedule."""

    def __init__(self, inner, schedule: FaultSchedule, clock: Clock):
        self.inner = inner
        self.schedule = schedule
        self.clock = clock
        self.attempts = 0

    def send(self, wire: bytes) -> str:
        attempt = self.attempts
        self.attempts += 1
        now = self.clock.now_ms()
        if any(lo <= now < hi for lo, hi in self.schedule.outages):
            raise LinkDown(f"scripted outage at {now}")
        if attempt in self.schedule.drop_requests:
            raise LinkDown(f"scripted request drop, attempt {attempt}")
        ack = self.inner.send(wire)
        if attempt in self.schedule.drop_acks:
            raise AckLost(f"scripted ack drop, attempt {attempt}")
        return ack


# --------------------------------------------------------------------------
# the gateway node
# --------------------------------------------------------------------------

@dataclass
class GatewayConfig:
    batch_interval_s: float = 5.0      # uplink batch window in simulated time
    queue_bound: int = 10_000
    backoff_base_ms: float = 1_000.0
    backoff_cap_ms: float = 60_000.0
    backoff_jitter: float = 0.25
    window_samples: int = 1024
    emg_sample_rate_hz: float = 1000.0
    spike_factor: float = 3.0


@dataclass
class GatewayStats:
    ingested: int = 0
    rejected: int = 0
    enqueue_log: list[tuple[str, str, int]] = field(default_factory=list)   # id, priority, at
    delivery_log: list[tuple[str, str, int]] = field(default_factory=list)  # id, priority, at
    retry_delays_ms: list[float] = field(default_factory=list)
    rejections: list[tuple[str, int, str]] = field(default_factory=list)    # device, seq, code
    # interleaved enqueue/deliver history for order verification
    order_events: list[tuple[str, str, str, int]] = field(default_factory=list)


def verify_delivery_order(stats: GatewayStats) -> list[str]:
    """Replay the enqueue/deliver history; report priority or FIFO breaches.

    At every delivery the chosen envelope must be the minimum of the
    then-pending set by (priority class, envelope counter).
    """
    violations: list[str] = []
    pending: dict[str, tuple[int, int]] = {}
    for action, envelope_id, priority, counter in stats.order_events:
        if action == "enqueue":
            rank = 0 if priority == Priority.CRITICAL.value else 1
            pending[envelope_id] = (rank, counter)
        elif action == "deliver":
            if envelope_id not in pending:
                violations.append(f"{envelope_id} delivered but never pending")
                continue
            best = min(pending.values())
            if pending[envelope_id] != best:
                violations.append(
                    f"{envelope_id} delivered ahead of a higher-priority envelope")
            del pending[envelope_id]
    return violations


class GatewayNode:
    """One edge gateway: ingest -> batch -> preprocess -> encrypt -> forward."""

    def __init__(
        self,
        gateway_id: str,
        key: bytes,
        queue_dir: str,
        clock: Clock,
        transports: Mapping[str, Any],
        config: GatewayConfig | None = None,
        on_link_change: Callable[[LinkState], None] | None = None,
        backoff_seed: int = 0,
    ):
        self.gateway_id = gateway_id
        self.key = _check_key(key)
        self.clock = clock
        self.config = config or GatewayConfig()
        self.transports = dict(transports)
        self.on_link_change = on_link_change
        self.queue = DurableQueue(queue_dir, self.config.queue_bound)
        self.preprocessor = Preprocessor(
            self.config.window_samples, self.config.emg_sample_rate_hz,
            self.config.spike_factor,
        )
        self.stats = GatewayStats()
        self.link = LinkState(active_link="WIFI", since=clock.now_ms())
        self._counter = self.queue.max_counter
        self._batch: list[SensorReading] = []
        self._batch_start: int | None = None
        self._fail_count = 0
        self._prev_delay_ms = 0.0
        self._next_retry_ms = 0
        self._rng = random.Random(backoff_seed)

    # -- ingest path --------------------------------------------------------

    def ingest(self, reading: SensorReading) -> None:
        """Buffer a reading; closes the batch when its window elapses."""
        interval_ms = int(self.config.batch_interval_s * 1000)
        if self._batch_start is None:
            self._batch_start = reading.timestamp
        if reading.timestamp >= self._batch_start + interval_ms:
            self.flush()
            self._batch_start = reading.timestamp
        self._batch.append(reading)
        self.stats.ingested += 1

    def flush(self) -> None:
        """Preprocess the open batch and enqueue its envelopes."""
        if not self._batch:
            return
        batch, self._batch = self._batch, []
        self._batch_start = None
        result = self.preprocessor.process(batch)
        for reading, code in result.rejected:
            self.stats.rejected += 1
            self.stats.rejections.append((reading.device_id, reading.seq, code))
        now = self.clock.now_ms()
        if result.critical:
            self._enqueue(result.critical, Priority.CRITICAL, now)
        if result.records:
            self._enqueue(result.records, Priority.ROUTINE, now)

    def _enqueue(self, records: list[Record], priority: Priority, now: int) -> None:
        self._counter += 1
        envelope = UploadEnvelope(
            envelope_id=f"{self.gateway_id}:{self._counter}",
            gateway_id=self.gateway_id,
            priority=priority,
            records=tuple(records),
            created_at=now,
        )
        self.queue.enqueue(envelope)
        self.stats.enqueue_log.append((envelope.envelope_id, priority.value, now))
        self.stats.order_events.append(
            ("enqueue", envelope.envelope_id, priority.value, self._counter))

    # -- delivery path --------------------------------------------------------

    def pump(self) -> int:
        """Deliver queued envelopes until empty or a backoff gate blocks.

        Returns how many envelopes were acknowledged this call.
        """
        delivered = 0
        while True:
            envelope = self.queue.peek()
            if envelope is None:
                return delivered
            now = self.clock.now_ms()
            if now < self._next_retry_ms:
                return delivered
            wire = seal(envelope, self.key)
            link_used = None
            ack = None
            ack_lost = False
            for link in ("WIFI", "CELLULAR"):
                transport = self.transports.get(link)
                if transport is None:
                    continue
                try:
                    ack = transport.send(wire)
                    link_used = link
                    break
                except AckLost:
                    link_used = link    # link worked; confirmation did not
                    ack_lost = True
                    break
                except LinkDown:
                    continue
            if ack is not None and ack == envelope.envelope_id:
                self._set_link(link_used)
                self.queue.mark_delivered(envelope.envelope_id)
                self.stats.delivery_log.append(
                    (envelope.envelope_id, envelope.priority.value, now))
                self.stats.order_events.append(
                    ("deliver", envelope.envelope_id, envelope.priority.value,
                     envelope.counter))
                self._fail_count = 0
                self._prev_delay_ms = 0.0
                self._next_retry_ms = 0
                delivered += 1
                continue
            self._set_link(link_used if ack_lost else "DOWN")
            self._schedule_retry(now)
            return delivered

    def _schedule_retry(self, now: int) -> None:
        self._fail_count += 1
        cap = self.config.backoff_cap_ms
        delay = min(cap, self.config.backoff_base_ms * 2 ** (self._fail_count - 1))
        delay *= 1.0 + self.config.backoff_jitter * self._rng.random()
        delay = min(cap, max(delay, self._prev_delay_ms))  # non-decreasing up to cap
        self._prev_delay_ms = delay
        self._next_retry_ms = now + int(delay)
        self.stats.retry_delays_ms.append(delay)

    def _set_link(self, link: str | None) -> None:
        link = link or "DOWN"
        if link != self.link.active_link:
            self.link = LinkState(active_link=link, since=self.clock.now_ms())
            if self.on_link_change is not None:
                self.on_link_change(self.link)

    def next_retry_at(self) -> int:
        return self._next_retry_ms

    def drain(self, max_attempts: int = 10_000) -> None:
        """Flush and pump until the queue empties, sleeping through backoff."""
        self.flush()
        for _ in range(max_attempts):
            self.pump()
            if self.queue.pending_count() == 0:
                return
            now = self.clock.now_ms()
            self.clock.sleep_ms(max(1, self._next_retry_ms - now))
        raise TimeoutError(
            f"queue failed to drain: {self.queue.pending_count()} envelopes pending")

    def close(self) -> None:
        self.queue.close()
