"""Command-line entry point: ingest, synth, train, backtest, forecast, report."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import backtest as bt
from .archive import load_group_archive, save_group
from .config import RunConfig, dump_toml, load_config
from .data_model import HOUR, METHODS
from .features import compute_aggregate
from .ingestion import (load_groups, parse_timestamp, write_meter_file, write_segment_file,
                        write_weather_file)
from .lstm.model import predict_24h
from .lstm.persist import load_model, save_model
from .synth import generate_group

log = logging.getLogger("meterforecast")


class CommandError(Exception):
    """A user-facing failure; the message is printed and the exit status is 1."""


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _plan_for(group, cfg: RunConfig) -> bt.BacktestPlan:
    pc = cfg.plan
    return bt.build_plan(group, pc.seed, pc.train_fraction, pc.n_train, pc.train_hours)


def cmd_ingest(meter_file, weather_file, segment_file, out_dir, cfg: RunConfig) -> list[Path]:
    out = _out_dir(out_dir)
    groups = load_groups(meter_file, weather_file, segment_file,
                         max_missing=cfg.ingest.max_missing, min_std=cfg.ingest.min_std)
    written = []
    with (out / "filtering_report.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("group_id", "meter_id", "reason"))
        for gid, (dataset, dropped) in groups.items():
            for d in dropped:
                w.writerow((gid, d.meter_id, d.reason))
            if dataset is None:
                log.warning("group %s is empty after filtering; no archive written", gid)
                continue
            written.append(save_group(dataset, out / f"{gid}.npz"))
            print(f"{gid}: {len(dataset.meters)} meters kept, {len(dropped)} dropped, "
                  f"{dataset.n_hours} hours")
    return written


def cmd_synth(out_dir, cfg: RunConfig) -> Path:
    out = _out_dir(out_dir)
    group = generate_group(cfg.synth)
    write_meter_file(out / "meters.csv", group.meters)
    write_weather_file(out / "weather.csv", group.weather)
    write_segment_file(out / "segments.csv", [(m, group.group_id) for m in group.meter_ids])
    print(f"wrote {len(group.meters)} meters x {group.n_hours} hours to {out}")
    return out


def cmd_train(group_archive, model_out, cfg: RunConfig):
    group = load_group_archive(group_archive)
    plan = _plan_for(group, cfg)
    print(dump_toml(cfg.to_dict()), end="")
    print(f"# plan: {len(plan.train_meter_ids)} train meters, {len(plan.test_meter_ids)} test meters, "
          f"{plan.train_hours} train hours, {plan.test_days} test days")

    def progress(epoch, loss):
        print(f"epoch {epoch:3d}  loss {loss:.6g}", flush=True)

    model, trace = bt.fit_group_model(group, plan, cfg.train, progress)
    save_model(model, model_out)
    trace_path = Path(str(model_out) + ".loss.csv")
    with trace_path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("epoch", "mean_loss"))
        for k, v in enumerate(trace, 1):
            w.writerow((k, f"{v:.6g}"))
    return model, trace


def _render_report(out: Path, records, plan: bt.BacktestPlan, plots: bool = True) -> dict:
    summary = bt.summarize(records, plan)
    bt.write_summary(out / "summary.json", summary)
    bt.write_plot_data(out, records, plan)
    if plots:
        from .plotting import plot_median_by_day, plot_median_by_meter
        test = [r for r in records if r.meter_id in plan.test_meter_ids]
        train = [r for r in records if r.meter_id in plan.train_meter_ids]
        for pop, subset in (("train", train), ("test", test)):
            if subset:
                plot_median_by_day(subset, out / f"median_mae_by_day_{pop}.png",
                                   f"{plan.group_id}: {pop} meters, median MAE per day")
        if test:
            plot_median_by_meter(test, out / "median_mae_by_meter_test.png",
                                 f"{plan.group_id}: median MAE per test meter")
    return summary


def cmd_backtest(group_archive, out_dir, cfg: RunConfig, model_path=None, methods=None,
                 plots: bool = True) -> bt.BacktestResult:
    out = _out_dir(out_dir)
    group = load_group_archive(group_archive)
    methods = tuple(methods or cfg.backtest.methods)
    model = None
    if model_path is not None:
        model = load_model(model_path)
        stored = model.training_meta.get("plan")
        plan = bt.BacktestPlan.from_dict(stored) if stored else _plan_for(group, cfg)
        missing = set(plan.meter_ids) - set(group.meter_ids)
        if missing or plan.group_id != group.group_id:
            raise CommandError("model was trained on a different group archive")
    else:
        plan = _plan_for(group, cfg)
    result = bt.run_backtest(group, plan, methods, cfg.backtest, model=model, train_config=cfg.train)
    (out / "plan.json").write_text(json.dumps(plan.to_dict(), indent=2) + "\n")
    bt.write_records(out / "records.csv", result.records)
    _render_report(out, result.records, plan, plots)
    _print_summary(result.summary)
    return result


def cmd_report(out_dir, plots: bool = True) -> dict:
    """Rebuild summary, plot data and figures from an existing back-test directory."""
    out = Path(out_dir)
    plan = bt.BacktestPlan.from_dict(json.loads((out / "plan.json").read_text()))
    records = bt.read_records(out / "records.csv")
    summary = _render_report(out, records, plan, plots)
    _print_summary(summary)
    return summary


def _print_summary(summary: dict) -> None:
    print("population,method,median_by_meter_kwh,median_by_day_kwh")
    for pop, entry in summary["populations"].items():
        for method in entry["median_by_meter"]:
            print(f"{pop},{method},{entry['median_by_meter'][method]:.6g},"
                  f"{entry['median_by_day'][method]:.6g}")
        for pair, v in entry["improvement_pct"].items():
            print(f"{pop},{pair}_improvement_pct,{v['median_by_meter']:.6g},{v['median_by_day']:.6g}")


def cmd_forecast(model_path, group_archive, meter_id, origin, out=None):
    model = load_model(model_path)
    group = load_group_archive(group_archive)
    ts = parse_timestamp(origin) if isinstance(origin, str) else origin
    if ts.minute or ts.second or ts.microsecond:
        raise CommandError(f"origin {ts} is not on the hour")
    k = int((ts - group.start) / HOUR)
    if k < 24:
        raise CommandError(f"origin {ts} leaves {max(k, 0)} hours of history; 24 are required")
    if k > group.n_hours:
        raise CommandError(f"origin {ts} is after the end of the archive")
    try:
        series = group.meter(meter_id)
    except KeyError as exc:
        raise CommandError(str(exc.args[0])) from None
    train_ids = model.training_meta.get("training_meters") or group.meter_ids
    missing = set(train_ids) - set(group.meter_ids)
    if missing:
        raise CommandError(f"archive lacks {len(missing)} of the model's training meters")
    aggregate = compute_aggregate(group, train_ids)
    w = group.weather
    fc = predict_24h(model, meter_id, series.values[:k], aggregate[:k],
                     w.apparent_temperature[:k], w.humidity[:k], ts)
    lines = ["hour,kwh_forecast"] + [f"{(ts + h * HOUR).isoformat()},{v:.6g}"
                                     for h, v in enumerate(fc.values)]
    text = "\n".join(lines) + "\n"
    if out:
        Path(out).write_text(text)
    print(text, end="")
    return fc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="meterforecast",
                                description="Pooled LSTM day-ahead forecasts for smart meters.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="TOML run configuration")
        return sp

    sp = add("ingest", "validate, filter and impute raw files into group archives")
    sp.add_argument("meter_file")
    sp.add_argument("weather_file")
    sp.add_argument("segment_file")
    sp.add_argument("out_dir")

    sp = add("synth", "write a synthetic group in the ingestion file format")
    sp.add_argument("out_dir")

    sp = add("train", "train the pooled network on a group archive")
    sp.add_argument("group_archive")
    sp.add_argument("model_out")

    sp = add("backtest", "rolling-origin evaluation of the forecasting methods")
    sp.add_argument("group_archive")
    sp.add_argument("out_dir")
    sp.add_argument("--model", help="trained model file (otherwise trained on the fly)")
    sp.add_argument("--methods", help=f"comma-separated subset of {','.join(METHODS)}")
    sp.add_argument("--no-plots", action="store_true", help="skip PNG figures")

    sp = add("forecast", "24-hour forecast for one meter from a given origin")
    sp.add_argument("model")
    sp.add_argument("group_archive")
    sp.add_argument("meter_id", nargs="?")
    sp.add_argument("origin", nargs="?", help="ISO timestamp of the first forecast hour")
    sp.add_argument("--out", help="also write the table to this file")

    sp = add("report", "rebuild summary, plot data and figures from a back-test directory")
    sp.add_argument("out_dir")
    sp.add_argument("--no-plots", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.command == "ingest":
            written = cmd_ingest(args.meter_file, args.weather_file, args.segment_file,
                                 args.out_dir, cfg)
            if not written:
                log.warning("no group survived filtering")
        elif args.command == "synth":
            cmd_synth(args.out_dir, cfg)
        elif args.command == "train":
            cmd_train(args.group_archive, args.model_out, cfg)
        elif args.command == "backtest":
            methods = [m.strip() for m in args.methods.split(",")] if args.methods else None
            cmd_backtest(args.group_archive, args.out_dir, cfg, args.model, methods,
                         plots=not args.no_plots)
        elif args.command == "forecast":
            meter = args.meter_id or cfg.forecast.meter_id
            origin = args.origin or cfg.forecast.origin
            if not meter or not origin:
                raise CommandError("forecast needs a meter id and an origin")
            cmd_forecast(args.model, args.group_archive, meter, origin, args.out)
        elif args.command == "report":
            cmd_report(args.out_dir, plots=not args.no_plots)
    except (CommandError, ValueError, KeyError, OSError, FloatingPointError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
