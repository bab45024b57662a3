"""Command line entry point: ``oranlat {simulate,train,gradcheck,run,plot}``.

Exit codes: 0 success, 1 gradient check failed, 2 usage or configuration
error, 3 numerical failure during training.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import shutil
import sys
import threading
import time
from dataclasses import replace
from pathlib import Path

from . import __version__
from .bus import KPM_TOPIC, Broker, BusClient, BusServer, BusUnavailable, resolve_port
from .dataset import DatasetTooSmall, prepare_csv
from .forecaster import (
    PARAM_NAMES,
    CheckpointError,
    EpochRecord,
    ModelConfig,
    TrainingDiverged,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .forecaster.gradcheck import gradient_check
from .kpm import REPORT_PERIOD_MS, InvalidRecord, write_csv
from .ransim import ConfigError, load_scenario, run_scenario
from .xapp import PolicyConfig, SchemaMismatch, read_forecast_log, run_online

log = logging.getLogger("oranlat")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3
TARGET_VAL_LOSS = 0.04


class UsageError(Exception):
    pass


def _abs(p) -> str | None:
    return None if p is None else str(Path(p).resolve())


def write_manifest(out_dir: Path, subcommand: str, seed, configs: dict, extra: dict) -> Path:
    """Record what is about to run. Contains no timestamps, so reruns match."""
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "subcommand": subcommand,
        "tool_version": __version__,
        "seed": seed,
        "output_dir": _abs(out_dir),
        "config_paths": {k: _abs(v) for k, v in configs.items()},
        "options": extra,
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _emit(args, summary: dict, lines: list[str]) -> None:
    if args.json_summary:
        print(json.dumps(summary, sort_keys=True))
    else:
        for line in lines:
            print(line)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# --- simulate ---------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = load_scenario(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    out = Path(args.out)
    write_manifest(out, "simulate", cfg.seed, {"scenario": args.config}, {})
    path = out / "kpm.csv"
    rows = write_csv(run_scenario(cfg), path)
    _emit(args, {"rows": rows, "csv": str(path), "seed": cfg.seed},
          [f"wrote {rows} rows to {path}"])
    return EXIT_OK


# --- train ------------------------------------------------------------------


def _load_model_config(path) -> ModelConfig:
    if path is None:
        return ModelConfig()
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return ModelConfig.from_dict(raw)
    except (json.JSONDecodeError, TypeError, ValueError) as exc:
        raise UsageError(f"model config {path}: {exc}") from None


def cmd_train(args) -> int:
    cfg = _load_model_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.max_epochs is not None:
        overrides["max_epochs"] = args.max_epochs
    if overrides:
        cfg = replace(cfg, **overrides)
    out = Path(args.out)
    write_manifest(out, "train", cfg.seed, {"data": args.data, "model_config": args.config},
                   {"model": cfg.to_dict()})

    data = prepare_csv(args.data, cfg.lookback)
    data.scaler.save(out / "scaler.json")

    hist_path = out / "history.csv"
    with open(hist_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "val_loss"])
        t0 = time.monotonic()

        def on_epoch(rec: EpochRecord, _weights) -> None:
            writer.writerow([rec.epoch, repr(rec.train_loss), repr(rec.val_loss)])
            fh.flush()
            if not args.quiet:
                print(f"epoch {rec.epoch:3d}  train {rec.train_loss:.6g}  val {rec.val_loss:.6g}"
                      f"  ({time.monotonic() - t0:.0f} s)", file=sys.stderr, flush=True)

        ckpt, history = train(cfg, data.train, data.val, data.scaler, on_epoch=on_epoch)

    save_checkpoint(ckpt, out / "model.ckpt")
    below = ckpt.best_val_loss < TARGET_VAL_LOSS
    summary = {
        "best_val_loss": ckpt.best_val_loss,
        "best_epoch": ckpt.epoch,
        "epochs_run": len(history),
        "below_target": below,
        "target": TARGET_VAL_LOSS,
        "train_windows": len(data.train),
        "val_windows": len(data.val),
    }
    _write_json(out / "train_summary.json", summary)
    _emit(args, summary, [
        f"best val loss {ckpt.best_val_loss:.6g} at epoch {ckpt.epoch} ({len(history)} epochs run)",
        f"below {TARGET_VAL_LOSS}: {'yes' if below else 'no'}",
    ])
    return EXIT_OK


# --- gradcheck --------------------------------------------------------------


def cmd_gradcheck(args) -> int:
    seed = 7 if args.seed is None else args.seed
    if args.out is not None:
        write_manifest(Path(args.out), "gradcheck", seed, {}, {"corrupt": args.corrupt})
    t0 = time.monotonic()
    report = gradient_check(seed=seed, corrupt=args.corrupt)
    elapsed = time.monotonic() - t0
    summary = {
        "max_rel_err": report.max_rel_err,
        "passed": report.passed,
        "tolerance": report.tolerance,
        "worst_tensor": report.worst.name,
        "tensors": {t.name: t.max_rel_err for t in report.tensors},
    }
    if args.out is not None:
        _write_json(Path(args.out) / "gradcheck.json", summary)
    lines = [f"{t.name:8s} max rel err {t.max_rel_err:.3e}" for t in report.tensors]
    lines.append(f"max relative error {report.max_rel_err:.3e} "
                 f"(tolerance {report.tolerance:g}, {elapsed:.2f} s)")
    if report.passed:
        lines.append("PASS")
    else:
        w = report.worst
        lines.append(f"FAIL: worst parameter {w.name}{list(w.worst_index)} "
                     f"analytic {w.analytic:.6g} numeric {w.numeric:.6g}")
    _emit(args, summary, lines)
    return EXIT_OK if report.passed else EXIT_FAIL


# --- run --------------------------------------------------------------------


def _producer(client: BusClient, records, pacing: bool, done: threading.Event,
              stop: threading.Event, errors: list) -> None:
    try:
        t0 = time.monotonic()
        for i, rec in enumerate(records):
            if stop.is_set():
                break
            if pacing:
                delay = t0 + i * REPORT_PERIOD_MS / 1000.0 - time.monotonic()
                if delay > 0:
                    time.sleep(delay)
            client.publish(KPM_TOPIC, rec.to_json())
    except BaseException as exc:  # surfaced by the supervisor
        errors.append(exc)
    finally:
        done.set()


def cmd_run(args) -> int:
    scenario = load_scenario(args.config)
    if args.seed is not None:
        scenario = replace(scenario, seed=args.seed)
    policy = PolicyConfig(args.threshold_ms, args.hysteresis)
    out = Path(args.out)
    write_manifest(out, "run", scenario.seed,
                   {"scenario": args.config, "checkpoint": args.checkpoint},
                   {"threshold_ms": policy.threshold_ms, "hysteresis": policy.hysteresis,
                    "pacing": not args.no_pacing})
    ckpt = load_checkpoint(args.checkpoint)

    bus_dir = out / "bus"
    if bus_dir.exists():
        shutil.rmtree(bus_dir)
    broker = Broker(bus_dir)
    try:
        server = BusServer(broker, args.host, resolve_port(args.port))
    except OSError as exc:
        broker.close()
        raise UsageError(f"cannot bind bus on port {resolve_port(args.port)}: {exc}") from None
    server.start()
    host, port = server.address
    log.info("bus on %s:%d", host, port)

    done, stop, errors = threading.Event(), threading.Event(), []
    pub_client = BusClient(host, port)
    producer = threading.Thread(
        target=_producer, name="producer",
        args=(pub_client, run_scenario(scenario), not args.no_pacing, done, stop, errors),
    )
    t0 = time.monotonic()
    try:
        with BusClient(host, port) as sub_client:
            producer.start()
            result = run_online(sub_client, KPM_TOPIC, ckpt, policy, out,
                                producer_done=done, shutdown=stop)
    finally:
        # consumer first, bus last
        stop.set()
        if producer.is_alive() or producer.ident is not None:
            producer.join()
        pub_client.close()
        server.stop()
        broker.close()
    if errors:
        raise errors[0]

    summary = {
        **result.to_dict(),
        "scenario_records": scenario.n_records,
        "seed": scenario.seed,
        "lookback": ckpt.config.lookback,
        "threshold_ms": policy.threshold_ms,
        "hysteresis": policy.hysteresis,
    }
    _write_json(out / "summary.json", summary)
    _emit(args, summary, [
        f"consumed {result.records_consumed} records, logged {result.rows_logged} forecasts "
        f"in {time.monotonic() - t0:.1f} s",
        f"MAE {result.mae_ms} ms, MSE {result.mse_ms} ms^2, normalized MSE {result.mse_normalized}",
        f"DEFER verdicts: {result.defer_count}",
    ])
    return EXIT_OK


# --- plot -------------------------------------------------------------------

SVG_W, SVG_H, MARGIN = 960, 360, 48


def _fmt(v: float) -> str:
    return f"{v:.3f}"


def render_svg(ts: list[int], actual: list[float], predicted: list[float]) -> str:
    """Static SVG with one polyline per series on shared axes."""
    t_lo, t_hi = min(ts), max(ts)
    values = actual + predicted
    v_lo, v_hi = min(values), max(values)
    t_span = (t_hi - t_lo) or 1
    v_span = (v_hi - v_lo) or 1.0
    pw, ph = SVG_W - 2 * MARGIN, SVG_H - 2 * MARGIN

    def points(series):
        return " ".join(
            f"{_fmt(MARGIN + (t - t_lo) / t_span * pw)},{_fmt(SVG_H - MARGIN - (v - v_lo) / v_span * ph)}"
            for t, v in zip(ts, series)
        )

    return "\n".join([
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_W}" height="{SVG_H}" '
        f'viewBox="0 0 {SVG_W} {SVG_H}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<line x1="{MARGIN}" y1="{SVG_H - MARGIN}" x2="{SVG_W - MARGIN}" y2="{SVG_H - MARGIN}" stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{SVG_H - MARGIN}" stroke="black"/>',
        f'<text x="{MARGIN}" y="{MARGIN - 8}" font-size="12">latency (ms) {v_lo:.3g} to {v_hi:.3g}</text>',
        f'<text x="{SVG_W - MARGIN}" y="{SVG_H - 16}" font-size="12" text-anchor="end">'
        f'ts_ms {t_lo} to {t_hi}</text>',
        f'<polyline id="actual" fill="none" stroke="#1f77b4" stroke-width="1" points="{points(actual)}"/>',
        f'<polyline id="predicted" fill="none" stroke="#d62728" stroke-width="1" points="{points(predicted)}"/>',
        f'<text x="{SVG_W - MARGIN}" y="{MARGIN - 8}" font-size="12" text-anchor="end">'
        '<tspan fill="#1f77b4">actual</tspan> / <tspan fill="#d62728">predicted</tspan></text>',
        "</svg>",
        "",
    ])


def cmd_plot(args) -> int:
    rows = read_forecast_log(args.log)
    paired = [r for r in rows if r.get("predicted_latency_ms") and r.get("actual_latency_ms")]
    if not paired:
        raise UsageError(f"{args.log} has no rows with both actual and predicted values")
    out = Path(args.out)
    write_manifest(out, "plot", args.seed, {"log": args.log}, {})
    ts = [int(r["ts_ms"]) for r in paired]
    actual = [float(r["actual_latency_ms"]) for r in paired]
    predicted = [float(r["predicted_latency_ms"]) for r in paired]
    (out / "plot.svg").write_text(render_svg(ts, actual, predicted), encoding="utf-8")
    with open(out / "plot.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ts_ms", "actual_latency_ms", "predicted_latency_ms"])
        for t, a, p in zip(ts, actual, predicted):
            w.writerow([t, repr(a), repr(p)])
    _emit(args, {"points": len(paired), "svg": str(out / "plot.svg"), "csv": str(out / "plot.csv")},
          [f"plotted {len(paired)} points to {out / 'plot.svg'}"])
    return EXIT_OK


# --- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the configured seed")
    common.add_argument("--json-summary", action="store_true",
                        help="print a single JSON object instead of text")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="oranlat", description="KPM latency forecasting toolkit")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="generate a KPM CSV from a scenario")
    s.add_argument("--config", required=True, help="scenario JSON")
    s.add_argument("--out", required=True, help="output directory (kpm.csv)")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("train", parents=[common], help="train the forecaster on a KPM CSV")
    t.add_argument("--data", required=True, help="KPM CSV")
    t.add_argument("--config", default=None, help="model config JSON (defaults if omitted)")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--max-epochs", type=int, default=None)
    t.add_argument("--quiet", action="store_true", help="no per-epoch progress on stderr")
    t.set_defaults(func=cmd_train)

    g = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    g.add_argument("--out", default=None, help="optional directory for manifest and report")
    g.add_argument("--config", default=None, help=argparse.SUPPRESS)
    g.add_argument("--corrupt", choices=PARAM_NAMES, default=None, help=argparse.SUPPRESS)
    g.set_defaults(func=cmd_gradcheck)

    r = sub.add_parser("run", parents=[common], help="broker + producer + xApp end to end")
    r.add_argument("--config", required=True, help="scenario JSON")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--threshold-ms", type=float, default=20.0)
    r.add_argument("--hysteresis", type=float, default=0.1)
    r.add_argument("--host", default="127.0.0.1")
    r.add_argument("--port", type=int, default=None,
                   help="bus port (0 picks a free one; default BUS_PORT or 9701)")
    r.add_argument("--no-pacing", action="store_true",
                   help="publish as fast as possible instead of every 100 ms")
    r.set_defaults(func=cmd_run)

    pl = sub.add_parser("plot", parents=[common], help="SVG and tidy CSV from a forecast log")
    pl.add_argument("--log", required=True, help="forecast_log.csv")
    pl.add_argument("--out", required=True, help="output directory")
    pl.add_argument("--config", default=None, help=argparse.SUPPRESS)
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, DatasetTooSmall, CheckpointError, SchemaMismatch,
            InvalidRecord, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except BusUnavailable as exc:
        print(f"bus unavailable: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
