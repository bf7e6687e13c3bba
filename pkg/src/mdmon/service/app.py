"""FastAPI surface over the analytics engine.

Bodies are canonical JSON; /ingest takes the binary wire envelope; /stream
is Server-Sent Events with log-sequence-number event ids and Last-Event-ID
replay. Operator endpoints are trusted-network by design: the only
authentication in the system is the gateway envelope AEAD.
"""

from __future__ import annotations

import queue
from typing import Iterator, Optional

from fastapi import FastAPI, Header, Query, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, StreamingResponse

from ..gateway import AuthFailed, Malformed
from ..model import (
    Cadence,
    InvalidOverride,
    IllegalTransition,
    MetricKind,
    to_record,
)
from .engine import AnalyticsEngine, ServiceConfig
from .schemas import (
    AckAlertIn,
    AckOut,
    AlertOut,
    CadenceIn,
    ForecastOut,
    PatientOut,
    RiskOut,
    ThresholdOverridesIn,
    ThresholdsOut,
    TimeseriesOut,
)
from .stream import StreamEvent, sse_format

HEARTBEAT_S = 0.5


def create_app(config: ServiceConfig | None = None,
               engine: AnalyticsEngine | None = None) -> FastAPI:
    config = config or ServiceConfig.from_env()
    engine = engine or AnalyticsEngine(config)
    app = FastAPI(title="mdmon", version="0.1.0")
    app.state.engine = engine
    if config.cors_origins:
        app.add_middleware(
            CORSMiddleware,
            allow_origins=config.cors_origins,
            allow_methods=["*"],
            allow_headers=["*"],
        )
    if config.console_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/console", StaticFiles(directory=config.console_dir, html=True),
                  name="console")

    def error(status: int, code: str, detail: str = "") -> JSONResponse:
        return JSONResponse(status_code=status, content={"error": code, "detail": detail})

    @app.post("/ingest", response_model=AckOut)
    async def ingest(request: Request):
        wire = await request.body()
        try:
            return engine.ingest_wire(wire)
        except AuthFailed as exc:
            return error(401, "AUTH_FAILED", str(exc))
        except (Malformed, ValueError) as exc:
            return error(400, "MALFORMED", str(exc))

    @app.get("/patients", response_model=list[PatientOut])
    def patients():
        out = []
        for pid in sorted(engine.profiles):
            profile = engine.profiles[pid]
            latest = engine.latest_assessment.get(pid)
            out.append(PatientOut(
                **to_record(profile),
                latest_tier=None if latest is None else latest.tier.value,
                latest_scaled_score=None if latest is None else latest.scaled_score,
            ))
        return out

    @app.get("/patients/{patient_id}/timeseries", response_model=TimeseriesOut)
    def timeseries(
        patient_id: str,
        metric: str,
        ts_from: Optional[int] = Query(default=None, alias="from"),
        ts_to: Optional[int] = Query(default=None, alias="to"),
    ):
        try:
            kind = MetricKind(metric.upper())
        except ValueError:
            return error(400, "UNKNOWN_METRIC", metric)
        lo = 0 if ts_from is None else ts_from
        hi = engine.sim_now + 1 if ts_to is None else ts_to
        points = [
            {"timestamp": ts, "value": float(v)}
            for ts, _d, _s, v in engine.store.query_range(patient_id, kind, lo, hi)
        ]
        return {"patient_id": patient_id, "metric": kind.value, "points": points}

    @app.get("/patients/{patient_id}/risk", response_model=RiskOut)
    def risk(patient_id: str):
        latest = engine.latest_assessment.get(patient_id)
        if latest is None:
            return error(404, "NO_ASSESSMENT", f"no assessment yet for {patient_id}")
        return to_record(latest)

    @app.get("/patients/{patient_id}/forecast", response_model=ForecastOut)
    def forecast(patient_id: str, metric: str = "CPK", horizon: int = 14):
        try:
            kind = MetricKind(metric.upper())
        except ValueError:
            return error(400, "UNKNOWN_METRIC", metric)
        result = engine.forecast_for(patient_id, kind, horizon)
        if result is None:
            return error(404, "NO_FORECAST", "insufficient history to fit a model")
        record = result.to_record()
        return {"patient_id": patient_id, "metric": kind.value, **record}

    @app.get("/alerts", response_model=list[AlertOut])
    def alerts(state: Optional[str] = None):
        from ..model import AlertState

        try:
            selected = None if state is None else AlertState(state.upper())
        except ValueError:
            return error(400, "UNKNOWN_STATE", state or "")
        return [to_record(a) for a in engine.book.all_alerts(selected)]

    @app.post("/alerts/{alert_id}/ack", response_model=AlertOut)
    def ack_alert(alert_id: str, body: AckAlertIn):
        try:
            return engine.ack_alert(alert_id, body.by)
        except KeyError:
            return error(404, "UNKNOWN_ALERT", alert_id)
        except IllegalTransition as exc:
            return error(409, "ILLEGAL_TRANSITION", str(exc))

    @app.post("/alerts/{alert_id}/resolve", response_model=AlertOut)
    def resolve_alert(alert_id: str):
        try:
            return engine.resolve_alert(alert_id)
        except KeyError:
            return error(404, "UNKNOWN_ALERT", alert_id)
        except IllegalTransition as exc:
            return error(409, "ILLEGAL_TRANSITION", str(exc))

    @app.put("/patients/{patient_id}/thresholds", response_model=ThresholdsOut)
    def put_thresholds(patient_id: str, body: ThresholdOverridesIn):
        try:
            merged = engine.override_thresholds(patient_id, body.overrides())
        except InvalidOverride as exc:
            return error(400, "INVALID_OVERRIDE", str(exc))
        return to_record(merged)

    @app.put("/patients/{patient_id}/cadence", response_model=PatientOut)
    def put_cadence(patient_id: str, body: CadenceIn):
        try:
            cadence = Cadence(body.cadence.upper())
        except ValueError:
            return error(400, "UNKNOWN_CADENCE", body.cadence)
        profile = engine.set_cadence(patient_id, cadence)
        latest = engine.latest_assessment.get(patient_id)
        return PatientOut(
            **to_record(profile),
            latest_tier=None if latest is None else latest.tier.value,
            latest_scaled_score=None if latest is None else latest.scaled_score,
        )

    @app.get("/stream")
    def stream(
        request: Request,
        last_event_id: Optional[int] = Query(default=None),
        last_event_id_header: Optional[str] = Header(default=None, alias="Last-Event-ID"),
    ):
        resume_from = last_event_id
        if resume_from is None and last_event_id_header is not None:
            try:
                resume_from = int(last_event_id_header)
            except ValueError:
                resume_from = None
        return StreamingResponse(
            _event_stream(engine, resume_from),
            media_type="text/event-stream",
            headers={"cache-control": "no-cache", "x-accel-buffering": "no"},
        )

    return app


def _event_stream(engine: AnalyticsEngine, resume_from: Optional[int]) -> Iterator[str]:
    from .engine import _EVENT_TYPE

    live = engine.broker.subscribe()
    try:
        watermark = 0
        if resume_from is not None:
            for event in engine.store.events_since(resume_from):
                event_type = _EVENT_TYPE.get(event.kind)
                if event_type is None:
                    continue
                payload = event.payload
                yield sse_format(StreamEvent(lsn=event.lsn, type=event_type, payload=payload))
                watermark = max(watermark, event.lsn)
        while True:
            try:
                event = live.get(timeout=HEARTBEAT_S)
            except queue.Empty:
                yield ": ping\n\n"
                continue
            if event.lsn <= watermark and event.type != "link_state":
                continue  # already replayed from the log
            yield sse_format(event)
    finally:
        engine.broker.unsubscribe(live)
