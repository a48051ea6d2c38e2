"""Rolling-origin evaluation over out-of-sample days and out-of-sample meters."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

import numpy as np

from .benchmarks.arima import MIN_HISTORY, arima_forecast, fit_meter
from .benchmarks.naive import seasonal_naive_forecast
from .data_model import HOUR, METHODS, GroupDataset
from .features import (HORIZON, TIMESTEPS, build_windows, compute_aggregate, fit_norm_stats,
                       group_features, inverse_transform, log_stats)
from .lstm.model import LstmModel, TrainConfig, train

log = logging.getLogger(__name__)

HOURS_PER_METER_BUDGET = 450_000
TRAIN_HOURS_STEP = 720
MIN_TRAIN_HOURS = 720
MAX_TRAIN_HOURS = 7200
WORKERS_ENV = "METERFORECAST_WORKERS"
RECORD_HEADER = ("method", "meter_id", "origin_date", "mae_kwh")


def compute_train_hours(total_meters: int) -> int:
    """450000 / meters, rounded to the nearest multiple of 720, clamped to [720, 7200]."""
    if total_meters < 1:
        raise ValueError("need at least one meter")
    steps = math.floor(HOURS_PER_METER_BUDGET / total_meters / TRAIN_HOURS_STEP + 0.5)
    return min(max(steps * TRAIN_HOURS_STEP, MIN_TRAIN_HOURS), MAX_TRAIN_HOURS)


def compute_test_days(total_hours: int, train_hours: int) -> int:
    rest = total_hours - train_hours
    if rest <= 0:
        raise ValueError(f"no test period: {total_hours} total hours, {train_hours} for training")
    if rest % 24:
        raise ValueError(f"test period of {rest} hours is not a whole number of days")
    return rest // 24


def split_meters(meter_ids, fraction: float = 0.8, seed: int = 0, n_train: int | None = None):
    """Seeded shuffle; the first ceil(fraction * n) (or ``n_train``) meters train.

    Both returned lists are sorted.
    """
    ids = sorted(meter_ids)
    if len(ids) < 2:
        raise ValueError("need at least two meters to split")
    k = math.ceil(fraction * len(ids)) if n_train is None else n_train
    if not 1 <= k < len(ids):
        raise ValueError(f"train count {k} leaves no meters on one side of the split")
    order = np.random.default_rng(seed).permutation(len(ids))
    train_ids = sorted(ids[i] for i in order[:k])
    test_ids = sorted(ids[i] for i in order[k:])
    return train_ids, test_ids


@dataclass(frozen=True)
class BacktestPlan:
    group_id: str
    train_meter_ids: tuple
    test_meter_ids: tuple
    train_hours: int
    test_days: int
    total_hours: int

    def __post_init__(self):
        overlap = set(self.train_meter_ids) & set(self.test_meter_ids)
        if overlap:
            raise ValueError(f"meters on both sides of the split: {sorted(overlap)}")
        if self.train_hours + 24 * self.test_days != self.total_hours:
            raise ValueError("train hours and test days do not add up to the horizon")
        if self.train_hours % 24:
            raise ValueError("train hours must end at midnight")

    @property
    def origins(self) -> list[int]:
        """Forecast origins as hour offsets, one per test day."""
        return [self.train_hours + 24 * k for k in range(self.test_days)]

    @property
    def meter_ids(self) -> list[str]:
        return sorted(self.train_meter_ids + self.test_meter_ids)

    def population(self, meter_id: str) -> str:
        return "train" if meter_id in self.train_meter_ids else "test"

    def to_dict(self) -> dict:
        return {"group_id": self.group_id, "train_meter_ids": list(self.train_meter_ids),
                "test_meter_ids": list(self.test_meter_ids), "train_hours": self.train_hours,
                "test_days": self.test_days, "total_hours": self.total_hours}

    @classmethod
    def from_dict(cls, d: dict) -> "BacktestPlan":
        return cls(d["group_id"], tuple(d["train_meter_ids"]), tuple(d["test_meter_ids"]),
                   int(d["train_hours"]), int(d["test_days"]), int(d["total_hours"]))


def build_plan(group: GroupDataset, seed: int = 0, fraction: float = 0.8,
               n_train: int | None = None, train_hours: int | None = None) -> BacktestPlan:
    """Split meters and hours; train hours default to :func:`compute_train_hours`."""
    if group.start.hour != 0:
        raise ValueError("group series must start at midnight so origins fall on day boundaries")
    train_ids, test_ids = split_meters(group.meter_ids, fraction, seed, n_train)
    total = group.n_hours - group.n_hours % 24
    th = compute_train_hours(len(group.meters)) if train_hours is None else train_hours
    if th < TIMESTEPS + HORIZON:
        raise ValueError(f"train hours {th} too short for one training window")
    days = compute_test_days(total, th)
    return BacktestPlan(group.group_id, tuple(train_ids), tuple(test_ids), th, days, total)


@dataclass(frozen=True)
class EvaluationRecord:
    method: str
    meter_id: str
    origin_day: date
    mae: float

    def __post_init__(self):
        if not (math.isfinite(self.mae) and self.mae >= 0):
            raise ValueError(f"invalid MAE {self.mae} for {self.method}/{self.meter_id}")


def mae(forecast, actual) -> float:
    """Mean absolute error over the 24 forecast hours, in kWh."""
    f = np.asarray(getattr(forecast, "values", forecast), dtype=np.float64)
    a = np.asarray(actual, dtype=np.float64)
    if f.shape != (24,) or a.shape != (24,):
        raise ValueError(f"expected 24 values each, got {f.shape} and {a.shape}")
    return math.fsum(np.abs(f - a).tolist()) / 24


def _grid(records):
    """method -> {(meter, day): mae}, checking the (meter x day) grid is complete."""
    by_method = defaultdict(dict)
    for r in records:
        key = (r.meter_id, r.origin_day)
        if key in by_method[r.method]:
            raise ValueError(f"duplicate record {r.method}/{r.meter_id}/{r.origin_day}")
        by_method[r.method][key] = r.mae
    for method, cells in by_method.items():
        meters = {m for m, _ in cells}
        days = {d for _, d in cells}
        if len(cells) != len(meters) * len(days):
            raise ValueError(f"incomplete evaluation grid for {method}: "
                             f"{len(cells)} cells for {len(meters)} meters x {len(days)} days")
    return by_method


def _two_stage_median(records, inner_key: int):
    out = {}
    for method, cells in sorted(_grid(records).items()):
        groups = defaultdict(list)
        for key, v in cells.items():
            groups[key[inner_key]].append(v)
        per = {k: float(np.median(v)) for k, v in sorted(groups.items())}
        out[method] = {"per": per, "overall": float(np.median(list(per.values())))}
    return out


def median_by_meter(records) -> dict:
    """Per method: median over days for each meter, then the median across meters.

    Returns ``{method: {"per": {meter_id: kWh}, "overall": kWh}}``.
    """
    return _two_stage_median(records, 0)


def median_by_day(records) -> dict:
    """Per method: median over meters for each day, then the median across days."""
    return _two_stage_median(records, 1)


@dataclass
class BacktestConfig:
    methods: tuple = METHODS
    arima_refit_days: int = 7
    arima_max_history: int | None = 2016
    workers: int | None = None  # falls back to $METERFORECAST_WORKERS, then 1

    def n_workers(self) -> int:
        if self.workers is not None:
            return max(1, int(self.workers))
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))


@dataclass
class BacktestResult:
    plan: BacktestPlan
    records: list
    summary: dict = field(default_factory=dict)


def fit_group_model(group: GroupDataset, plan: BacktestPlan, config: TrainConfig | None = None,
                    progress=None):
    """Train the pooled network on the train meters over the train window only.

    Returns ``(model, loss_trace)``.
    """
    train_ids = list(plan.train_meter_ids)
    g = group.with_aggregate(compute_aggregate(group, train_ids))
    stats = fit_norm_stats(g, plan.train_hours, train_ids)
    tensor = build_windows(g, stats, (0, plan.train_hours), meter_ids=train_ids)
    result = train(tensor, config, stats, progress)
    result.model.training_meta["plan"] = plan.to_dict()
    return result.model, result.loss_trace


def _naive_records(group, plan):
    out = []
    for m in plan.meter_ids:
        z = group.meter(m).values
        for o in plan.origins:
            day = (group.start + o * HOUR).date()
            fc = seasonal_naive_forecast(z[:o], day, m)
            out.append(EvaluationRecord("naive", m, day, mae(fc, z[o:o + 24])))
    return out


def _arima_meter(args):
    meter_id, z, origins, start, refit_days, max_history = args
    out = []
    spec = None
    for k, o in enumerate(origins):
        history = z[:o]
        if spec is None or k % refit_days == 0:
            if len(history) < MIN_HISTORY:
                raise ValueError(f"meter {meter_id}: {len(history)} hours of history, "
                                 f"auto ARIMA needs {MIN_HISTORY}")
            spec = fit_meter(history, max_history=max_history)
        day = (start + o * HOUR).date()
        fc = arima_forecast(spec, history, day, meter_id)
        out.append(EvaluationRecord("arima", meter_id, day, mae(fc, z[o:o + 24])))
    return out


def _arima_records(group, plan, config: BacktestConfig):
    jobs = [(m, np.array(group.meter(m).values), plan.origins, group.start,
             config.arima_refit_days, config.arima_max_history) for m in plan.meter_ids]
    workers = config.n_workers()
    if workers == 1:
        chunks = [_arima_meter(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_arima_meter, jobs))
    return [r for chunk in chunks for r in chunk]


def meter_stats_for_backtest(group: GroupDataset, plan: BacktestPlan, model: LstmModel):
    """Training meters keep their fitted stats; others use their pre-test history."""
    stats = {}
    for m in plan.meter_ids:
        if m in model.norm_stats.meters:
            stats[m] = model.norm_stats.meters[m]
        else:
            stats[m] = log_stats(group.meter(m).values[:plan.train_hours])
    return stats


def _lstm_records(group, plan, model: LstmModel):
    g = group.with_aggregate(compute_aggregate(group, plan.train_meter_ids))
    stats = meter_stats_for_backtest(g, plan, model)
    origins = np.array(plan.origins)
    offs = np.arange(-TIMESTEPS, 0)
    out = []
    for m in plan.meter_ids:
        feats = group_features(g, model.norm_stats, [m], meter_stats=stats)[0]
        windows = feats[origins[:, None] + offs]  # only hours before each origin
        preds = model.predict_normalized(windows)
        z = g.meter(m).values
        for o, y in zip(origins, preds):
            day = (g.start + int(o) * HOUR).date()
            fc = inverse_transform(y, *stats[m])
            out.append(EvaluationRecord("lstm", m, day, mae(fc, z[o:o + 24])))
    return out


def run_backtest(group: GroupDataset, plan: BacktestPlan, methods=None,
                 config: BacktestConfig | None = None, model: LstmModel | None = None,
                 train_config: TrainConfig | None = None) -> BacktestResult:
    """Evaluate every method on every (meter, test day) cell of the plan.

    The LSTM is trained once (unless ``model`` is supplied) and never updated
    during the test period.
    """
    config = config or BacktestConfig()
    methods = tuple(methods or config.methods)
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise ValueError(f"unknown methods {sorted(unknown)}")
    records = []
    if "naive" in methods:
        records += _naive_records(group, plan)
    if "arima" in methods:
        records += _arima_records(group, plan, config)
    if "lstm" in methods:
        if model is None:
            model, _ = fit_group_model(group, plan, train_config)
        records += _lstm_records(group, plan, model)
    records.sort(key=lambda r: (r.method, r.meter_id, r.origin_day))
    return BacktestResult(plan, records, summarize(records, plan))


def improvement(benchmark: float, lstm: float) -> float:
    """Relative improvement of the LSTM over a benchmark, in percent."""
    return 100.0 * (benchmark - lstm) / benchmark if benchmark > 0 else float("nan")


def summarize(records, plan: BacktestPlan) -> dict:
    summary = {"group_id": plan.group_id, "train_hours": plan.train_hours,
               "test_days": plan.test_days, "populations": {}}
    for pop, ids in (("train", set(plan.train_meter_ids)), ("test", set(plan.test_meter_ids)),
                     ("all", set(plan.meter_ids))):
        subset = [r for r in records if r.meter_id in ids]
        if not subset:
            continue
        by_meter = median_by_meter(subset)
        by_day = median_by_day(subset)
        entry = {
            "median_by_meter": {m: v["overall"] for m, v in by_meter.items()},
            "median_by_day": {m: v["overall"] for m, v in by_day.items()},
            "improvement_pct": {},
        }
        if "lstm" in by_meter:
            for bench in ("naive", "arima"):
                if bench in by_meter:
                    entry["improvement_pct"][f"lstm_vs_{bench}"] = {
                        "median_by_meter": improvement(by_meter[bench]["overall"], by_meter["lstm"]["overall"]),
                        "median_by_day": improvement(by_day[bench]["overall"], by_day["lstm"]["overall"]),
                    }
        summary["populations"][pop] = entry
    return summary


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def write_records(path, records) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_HEADER)
        for r in records:
            w.writerow([r.method, r.meter_id, r.origin_day.isoformat(), _fmt(r.mae)])


def read_records(path) -> list[EvaluationRecord]:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != RECORD_HEADER:
            raise ValueError(f"{path}: bad records header {header}")
        return [EvaluationRecord(m, meter, date.fromisoformat(d), float(v))
                for m, meter, d, v in reader]


def _round(obj):
    if isinstance(obj, float):
        return float(_fmt(obj)) if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _round(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_round(v) for v in obj]
    return obj


def write_summary(path, summary: dict) -> None:
    Path(path).write_text(json.dumps(_round(summary), indent=2, sort_keys=True) + "\n")


def write_plot_data(out_dir, records, plan: BacktestPlan) -> dict:
    """Median MAE per day and per meter, per method and population, as CSV files."""
    out_dir = Path(out_dir)
    paths = {}
    for pop, ids in (("train", set(plan.train_meter_ids)), ("test", set(plan.test_meter_ids))):
        subset = [r for r in records if r.meter_id in ids]
        if not subset:
            continue
        by_day = median_by_day(subset)
        p = out_dir / f"median_mae_by_day_{pop}.csv"
        with p.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("origin_date", "method", "median_mae_kwh"))
            for method, v in by_day.items():
                for day, x in v["per"].items():
                    w.writerow((day.isoformat(), method, _fmt(x)))
        paths[f"by_day_{pop}"] = p
        by_meter = median_by_meter(subset)
        p = out_dir / f"median_mae_by_meter_{pop}.csv"
        with p.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("meter_id", "method", "median_mae_kwh"))
            for method, v in by_meter.items():
                for meter, x in v["per"].items():
                    w.writerow((meter, method, _fmt(x)))
        paths[f"by_meter_{pop}"] = p
    return paths
