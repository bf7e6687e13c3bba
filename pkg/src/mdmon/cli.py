"""Single entry point: every workflow runs headlessly from here.

`demo` wires simulator, gateway, and analytics service together in one
process on the logical clock, so a 24-hour scenario finishes in well
under the wall-time its speed multiplier allows; pass --wall-pace to
watch it live instead.
"""

from __future__ import annotations

import csv
import json
import math
import os
import sys
import uuid
from importlib import resources

import click

from . import forecast as fc
from . import gateway as gw
from .clock import ManualClock, PacedClock
from .learn import Dataset, metrics as learn_metrics, split, train_forest, train_svm
from .learn.data import FEATURE_NAMES
from .learn.forest import ForestModel
from .learn.svm import SvmModel
from .model import MetricKind, default_thresholds, to_record
from .service.engine import _METRIC_FOR_FEATURE, AnalyticsEngine, ServiceConfig, _resample
from .simulate import emit, generate, load_scenario
from .store import EventLog

DEFAULT_KEY = bytes(range(32))


def bundled_scenario_path(name: str) -> str:
    return str(resources.files("mdmon").joinpath(f"scenarios/{name}.json"))


def _resolve_key(key_hex: str | None) -> bytes:
    if key_hex:
        return bytes.fromhex(key_hex)
    env = os.environ.get("MD_GATEWAY_KEY")
    if env:
        return bytes.fromhex(env)
    return DEFAULT_KEY


@click.group()
def main():
    """IoT-style remote monitoring pipeline for muscular dystrophy care."""


# --------------------------------------------------------------------------
# simulate
# --------------------------------------------------------------------------

@main.command()
@click.option("--scenario", "scenario_path", required=True, type=click.Path(exists=True))
@click.option("--seed", type=int, default=None, help="Override the scenario seed.")
@click.option("--speed", default=None, type=float,
              help="Pace output at speed x real time (default: all at once).")
@click.option("--out", "out_path", default="-", help="JSONL output path, '-' for stdout.")
def simulate(scenario_path, seed, speed, out_path):
    """Generate a scenario's telemetry as JSON Lines."""
    scenario = load_scenario(scenario_path, seed_override=seed)
    readings = generate(scenario)
    sink = sys.stdout if out_path == "-" else open(out_path, "w", encoding="utf-8")

    def write(reading):
        sink.write(json.dumps(to_record(reading)) + "\n")
        if speed is not None:
            sink.flush()  # live consumers see paced lines as they happen

    try:
        emit(readings, math.inf if speed is None else speed, write)
    finally:
        if sink is not sys.stdout:
            sink.close()
    click.echo(f"wrote {len(readings)} readings", err=True)


# --------------------------------------------------------------------------
# gateway
# --------------------------------------------------------------------------

@main.command("gateway")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True),
              help="JSONL readings file from `mdmon simulate`.")
@click.option("--service", "service_url", required=True, help="Cloud base URL.")
@click.option("--queue-dir", default="./gateway-queue", show_default=True)
@click.option("--gateway-id", default=None, help="32-char hex id; generated if absent.")
@click.option("--key-hex", default=None, help="AES-256 key, hex; or MD_GATEWAY_KEY.")
@click.option("--batch-interval", default=5.0, show_default=True)
@click.option("--window-samples", default=1024, show_default=True,
              help="EMG window length the stream was generated with.")
def gateway_cmd(in_path, service_url, queue_dir, gateway_id, key_hex,
                batch_interval, window_samples):
    """Run a store-and-forward gateway over HTTP against a live service."""
    from .model import reading_from_record

    gateway_id = gateway_id or uuid.uuid4().hex
    clock = ManualClock()
    node = gw.GatewayNode(
        gateway_id=gateway_id,
        key=_resolve_key(key_hex),
        queue_dir=queue_dir,
        clock=clock,
        transports={"WIFI": gw.HttpTransport(service_url)},
        config=gw.GatewayConfig(batch_interval_s=batch_interval,
                                window_samples=window_samples),
    )
    count = 0
    with open(in_path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            reading = reading_from_record(json.loads(line))
            clock.advance_to(reading.timestamp)
            node.ingest(reading)
            node.pump()
            count += 1
    node.drain()
    click.echo(f"forwarded {count} readings in "
               f"{len(node.stats.delivery_log)} envelopes "
               f"({node.stats.rejected} rejected)")


# --------------------------------------------------------------------------
# serve
# --------------------------------------------------------------------------

@main.command()
@click.option("--data-dir", default=None, help="Defaults to MD_DATA_DIR or ./mdmon-data.")
@click.option("--listen", default=None, help="host:port; defaults to MD_LISTEN.")
@click.option("--key-hex", default=None, help="Gateway key; or MD_GATEWAY_KEY.")
@click.option("--console-dir", default=None, type=click.Path(exists=True),
              help="Serve a built console bundle at /console.")
def serve(data_dir, listen, key_hex, console_dir):
    """Run the analytics service (ingest + operator API + event stream)."""
    import uvicorn

    from .service.app import create_app

    config = ServiceConfig.from_env()
    if data_dir:
        config.data_dir = data_dir
    if listen:
        config.listen = listen
    config.default_key = _resolve_key(key_hex)
    config.console_dir = console_dir
    host, _, port = config.listen.partition(":")
    app = create_app(config)
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8000))


# --------------------------------------------------------------------------
# demo
# --------------------------------------------------------------------------

@main.command()
@click.option("--scenario", "scenario_path", default=None,
              help="Scenario file; defaults to the bundled deterioration scenario.")
@click.option("--speed", default=60.0, show_default=True,
              help="Minimum acceleration over real time (used with --wall-pace).")
@click.option("--duration", type=float, default=None, help="Override scenario hours.")
@click.option("--seed", type=int, default=None)
@click.option("--data-dir", default=None, help="Store location; default: temp dir.")
@click.option("--wall-pace", is_flag=True, help="Pace against the wall clock.")
@click.option("--json", "as_json", is_flag=True, help="Machine-readable summary.")
def demo(scenario_path, speed, duration, seed, data_dir, wall_pace, as_json):
    """Run simulator, gateway, and service end to end; print a summary.

    Exit codes: 0 clean run, 1 scenario error, 2 invariant violation.
    """
    import tempfile

    from .simulate import InvalidScenario

    path = scenario_path or bundled_scenario_path("deterioration")
    try:
        scenario = load_scenario(path, seed_override=seed)
        if duration is not None:
            from dataclasses import replace as dc_replace

            scenario = dc_replace(scenario, duration_hours=duration).validate()
        readings = generate(scenario)
    except (OSError, json.JSONDecodeError, InvalidScenario, KeyError, ValueError) as exc:
        click.echo(f"scenario error: {exc}", err=True)
        sys.exit(1)

    data_dir = data_dir or tempfile.mkdtemp(prefix="mdmon-demo-")
    summary = _run_demo(scenario, readings, data_dir, speed, wall_pace)
    if as_json:
        click.echo(json.dumps(summary, indent=2))
    else:
        _print_summary(summary)
    sys.exit(2 if summary["invariant_violations"] else 0)


def _run_demo(scenario, readings, data_dir: str, speed: float, wall_pace: bool) -> dict:
    clock = PacedClock(speed) if wall_pace else ManualClock()
    gateway_id = uuid.uuid4().hex
    config = ServiceConfig(
        data_dir=os.path.join(data_dir, "store"),
        gateway_keys={gateway_id: DEFAULT_KEY},
        window_samples=scenario.cadence.window_samples,
    )
    engine = AnalyticsEngine(config)
    for profile in scenario.patients:
        engine.register_profile(profile)
    node = gw.GatewayNode(
        gateway_id=gateway_id,
        key=DEFAULT_KEY,
        queue_dir=os.path.join(data_dir, "queue"),
        clock=clock,
        transports={"WIFI": gw.InProcessTransport(engine.ingest_wire)},
        config=gw.GatewayConfig(
            window_samples=scenario.cadence.window_samples,
            emg_sample_rate_hz=scenario.cadence.emg_sample_rate_hz,
        ),
        on_link_change=engine.publish_link_state,
    )

    def sink(reading):
        node.ingest(reading)
        node.pump()

    emit(readings, speed if wall_pace else math.inf, sink, clock=clock)
    node.drain()
    engine.evaluate_pending()
    return _summarize(scenario, readings, engine, node)


def _summarize(scenario, readings, engine: AnalyticsEngine, node) -> dict:
    store = engine.store
    alerts = engine.book.all_alerts()
    alerts_by_rule: dict[str, int] = {}
    for a in alerts:
        alerts_by_rule[a.rule_id] = alerts_by_rule.get(a.rule_id, 0) + 1
    alert_seq = [
        {"rule_id": a.rule_id, "severity": a.severity.value,
         "patient_id": a.patient_id, "created_at": a.created_at}
        for a in sorted(alerts, key=lambda a: a.created_at)
    ]

    trajectories: dict[str, list[str]] = {}
    for event in store.events_since(0):
        if event.kind != "assessment":
            continue
        tier = event.payload["tier"]
        track = trajectories.setdefault(event.payload["patient_id"], [])
        if not track or track[-1] != tier:
            track.append(tier)

    first_breach_at = None
    for event in store.events_since(0):
        if event.kind == "forecast" and event.payload.get("breach"):
            first_breach_at = event.payload["as_of"]
            break

    violations = list(gw.verify_delivery_order(node.stats))
    missing, duplicated = _check_record_conservation(readings, store)
    violations.extend(missing)
    violations.extend(duplicated)
    delays = node.stats.retry_delays_ms
    if any(b < a for a, b in zip(delays, delays[1:])):
        violations.append("retry backoff gaps decreased below the cap")

    final_tiers = {
        pid: {"tier": a.tier.value, "scaled_score": round(a.scaled_score, 3)}
        for pid, a in engine.latest_assessment.items()
    }
    return {
        "scenario_seed": scenario.seed,
        "patients": [p.patient_id for p in scenario.patients],
        "readings_generated": len(readings),
        "readings_rejected": node.stats.rejected,
        "envelopes_delivered": len(node.stats.delivery_log),
        "retries": len(delays),
        "alerts_by_rule": alerts_by_rule,
        "alert_sequence": alert_seq,
        "tier_trajectory": trajectories,
        "final_tiers": final_tiers,
        "first_forecast_breach_at": first_breach_at,
        "diagnostics": len(engine.diagnostics),
        "invariant_violations": violations,
    }


def _check_record_conservation(readings, store) -> tuple[list[str], list[str]]:
    """Every valid generated reading lands exactly once (EMG as features)."""
    missing = []
    for r in readings:
        kind = "emg_features" if r.metric is MetricKind.EMG_WAVEFORM else "reading"
        if not store.contains(kind, r.device_id, r.seq):
            missing.append(f"lost record {kind}:{r.device_id}:{r.seq}")
            if len(missing) >= 5:
                missing.append("... more records missing")
                break
    return missing, []


def _print_summary(summary: dict) -> None:
    click.echo("=== demo summary ===")
    click.echo(f"readings generated : {summary['readings_generated']}")
    click.echo(f"envelopes delivered: {summary['envelopes_delivered']} "
               f"(retries: {summary['retries']})")
    click.echo("alerts by rule:")
    for rule, count in sorted(summary["alerts_by_rule"].items()):
        click.echo(f"  {rule:<24} {count}")
    if not summary["alerts_by_rule"]:
        click.echo("  (none)")
    click.echo("tier trajectory:")
    for pid, track in summary["tier_trajectory"].items():
        click.echo(f"  {pid}: {' -> '.join(track)}")
    click.echo("final tiers:")
    for pid, info in summary["final_tiers"].items():
        click.echo(f"  {pid}: {info['tier']} (score {info['scaled_score']})")
    if summary["first_forecast_breach_at"] is not None:
        click.echo(f"first CPK forecast breach at t={summary['first_forecast_breach_at']} ms")
    if summary["invariant_violations"]:
        click.echo("INVARIANT VIOLATIONS:", err=True)
        for v in summary["invariant_violations"]:
            click.echo(f"  {v}", err=True)
    else:
        click.echo("invariants: all checks passed")


# --------------------------------------------------------------------------
# train / evaluate
# --------------------------------------------------------------------------

def _corpus_from_store(store: EventLog) -> Dataset:
    """Self-labeled corpus: stored assessments labeled by tier, features as-of."""
    import numpy as np

    rows, labels = [], []
    for event in store.events_since(0):
        if event.kind != "assessment":
            continue
        payload = event.payload
        pid, ts = payload["patient_id"], int(payload["timestamp"])
        row = []
        for name in FEATURE_NAMES:
            metric = _METRIC_FOR_FEATURE[name]
            series = store.query_range(pid, metric, 0, ts + 1)
            row.append(float(series[-1][3]) if series else np.nan)
        rows.append(row)
        labels.append(payload["tier"])
    if not rows:
        raise click.ClickException("no assessments in the data directory; run demo first")
    data = np.asarray(rows, dtype=float)
    for j in range(data.shape[1]):
        col = data[:, j]
        mean = float(np.nanmean(col)) if not np.all(np.isnan(col)) else 0.0
        col[np.isnan(col)] = mean
    return Dataset(data, tuple(labels), FEATURE_NAMES)


@main.command()
@click.option("--data-dir", required=True, type=click.Path(exists=True))
@click.option("--model", "model_kind", type=click.Choice(["rf", "svm"]), default="rf",
              show_default=True)
@click.option("--out", "out_path", default="model.json", show_default=True)
@click.option("--seed", type=int, default=7, show_default=True)
@click.option("--ratios", default="0.6,0.2,0.2", show_default=True)
def train(data_dir, model_kind, out_path, seed, ratios):
    """Train a risk-tier classifier on the stored, self-labeled corpus."""
    store = EventLog(os.path.join(data_dir, "store")
                     if os.path.isdir(os.path.join(data_dir, "store")) else data_dir)
    dataset = _corpus_from_store(store)
    ratio_tuple = tuple(float(x) for x in ratios.split(","))
    train_set, val_set, test_set = split(dataset, ratio_tuple, seed=seed)
    if model_kind == "rf":
        model = train_forest(train_set, seed=seed)
    else:
        model = train_svm(train_set, seed=seed)
    val_metrics = learn_metrics(model.predict(val_set.features), val_set.labels)
    test_metrics = learn_metrics(model.predict(test_set.features), test_set.labels)
    artifact = {
        "model_kind": model_kind,
        "seed": seed,
        "ratios": list(ratio_tuple),
        "model": model.to_record(),
        "metrics": {"validation": val_metrics, "test": test_metrics},
        "rows": len(dataset),
    }
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(artifact, fh)
    click.echo(f"trained {model_kind} on {len(train_set)} rows "
               f"(corpus {len(dataset)}); artifact: {out_path}")
    click.echo(f"validation accuracy: {val_metrics['accuracy']:.4f}")
    click.echo(f"test accuracy:       {test_metrics['accuracy']:.4f}")
    if model_kind == "rf":
        top = model.ranked_features()[:3]
        click.echo("top features: " + ", ".join(f"{n} ({v:.3f})" for n, v in top))


@main.command()
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--data-dir", required=True, type=click.Path(exists=True))
def evaluate(model_path, data_dir):
    """Re-evaluate a saved artifact on its held-out split (same seed, same numbers)."""
    with open(model_path, encoding="utf-8") as fh:
        artifact = json.load(fh)
    store = EventLog(os.path.join(data_dir, "store")
                     if os.path.isdir(os.path.join(data_dir, "store")) else data_dir)
    dataset = _corpus_from_store(store)
    _, _, test_set = split(dataset, tuple(artifact["ratios"]), seed=artifact["seed"])
    if artifact["model_kind"] == "rf":
        model = ForestModel.from_record(artifact["model"])
    else:
        model = SvmModel.from_record(artifact["model"])
    m = learn_metrics(model.predict(test_set.features), test_set.labels)
    click.echo(f"test accuracy: {m['accuracy']:.4f}")
    for cls in sorted(m["precision"]):
        p = m["precision"][cls]
        r = m["recall"][cls]
        click.echo(f"  {cls:<9} precision={'ABSENT' if p is None else f'{p:.4f}'} "
                   f"recall={'ABSENT' if r is None else f'{r:.4f}'}")
    stored = artifact["metrics"]["test"]["accuracy"]
    click.echo(f"stored test accuracy at train time: {stored:.4f}")


# --------------------------------------------------------------------------
# forecast / export / report
# --------------------------------------------------------------------------

@main.command("forecast")
@click.option("--data-dir", required=True, type=click.Path(exists=True))
@click.option("--patient", required=True)
@click.option("--metric", default="cpk", show_default=True)
@click.option("--horizon", default=14, show_default=True)
@click.option("--out", "out_path", default="-", help="CSV path, '-' for stdout.")
def forecast_cmd(data_dir, patient, metric, horizon, out_path):
    """Forecast a biomarker and emit (step, value, breach_flag) CSV."""
    store = EventLog(os.path.join(data_dir, "store")
                     if os.path.isdir(os.path.join(data_dir, "store")) else data_dir)
    kind = MetricKind(metric.upper())
    series = store.query_range(patient, kind, 0, 2**62)
    if len(series) < 4:
        raise click.ClickException(f"not enough {kind.value} history for {patient}")
    values, step_s = _resample([(ts, float(v)) for ts, _d, _s, v in series])
    try:
        model = fc.fit_ar(values, p=1, d=1, name=f"{patient}:{kind.value}", floor_mult=3)
        result = fc.forecast(model, values, horizon, default_thresholds(),
                             metric=kind.value, step_seconds=step_s)
    except (fc.SeriesTooShort, fc.NonstationaryModel) as exc:
        raise click.ClickException(str(exc))
    sink = sys.stdout if out_path == "-" else open(out_path, "w", newline="", encoding="utf-8")
    try:
        writer = csv.writer(sink)
        writer.writerow(["step", "value", "breach_flag"])
        breach_step = result.breach.first_breach_step if result.breach else None
        for i, v in enumerate(result.values, start=1):
            flagged = breach_step is not None and i >= breach_step
            writer.writerow([i, f"{v:.3f}", int(flagged)])
    finally:
        if sink is not sys.stdout:
            sink.close()


@main.command()
@click.option("--data-dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", default="./export", show_default=True)
def export(data_dir, out_dir):
    """Export per-patient, per-metric CSV files from the store."""
    store = EventLog(os.path.join(data_dir, "store")
                     if os.path.isdir(os.path.join(data_dir, "store")) else data_dir)
    os.makedirs(out_dir, exist_ok=True)
    written = 0
    for pid in store.patients_seen():
        for metric in store.metrics_for(pid):
            rows = store.query_range(pid, metric, 0, 2**62)
            path = os.path.join(out_dir, f"{pid}_{metric.lower()}.csv")
            with open(path, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(["timestamp", "value"])
                for ts, _d, _s, v in rows:
                    writer.writerow([ts, v])
            written += 1
    click.echo(f"wrote {written} CSV files to {out_dir}")


@main.command()
@click.option("--data-dir", required=True, type=click.Path(exists=True))
@click.option("--json", "as_json", is_flag=True)
def report(data_dir, as_json):
    """Summarize a data directory: patients, alerts, latest tiers."""
    store = EventLog(os.path.join(data_dir, "store")
                     if os.path.isdir(os.path.join(data_dir, "store")) else data_dir)
    alerts = store.fold_alerts().values()
    by_rule: dict[str, int] = {}
    by_state: dict[str, int] = {}
    for a in alerts:
        by_rule[a.rule_id] = by_rule.get(a.rule_id, 0) + 1
        by_state[a.state.value] = by_state.get(a.state.value, 0) + 1
    latest_tier: dict[str, str] = {}
    for event in store.events_since(0):
        if event.kind == "assessment":
            latest_tier[event.payload["patient_id"]] = event.payload["tier"]
    summary = {
        "patients": store.patients_seen(),
        "readings": store.reading_count(),
        "alerts_by_rule": by_rule,
        "alerts_by_state": by_state,
        "latest_tier": latest_tier,
    }
    if as_json:
        click.echo(json.dumps(summary, indent=2))
        return
    click.echo(f"patients: {', '.join(summary['patients']) or '(none)'}")
    click.echo(f"readings: {summary['readings']}")
    click.echo("alerts by rule: " + (", ".join(
        f"{k}={v}" for k, v in sorted(by_rule.items())) or "(none)"))
    click.echo("alerts by state: " + (", ".join(
        f"{k}={v}" for k, v in sorted(by_state.items())) or "(none)"))
    for pid, tier in sorted(latest_tier.items()):
        click.echo(f"latest tier {pid}: {tier}")


if __name__ == "__main__":
    main()
