"""Reading raw meter/weather/segment files, hourly aggregation, filtering, LOCF."""

from __future__ import annotations

import csv
import logging
from collections import defaultdict
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .data_model import HOUR, GroupDataset, MeterSeries, WeatherSeries, validate_group

log = logging.getLogger(__name__)

METER_HEADER = ("meter_id", "timestamp", "kwh")
WEATHER_HEADER = ("timestamp", "apparent_temperature", "humidity")
SEGMENT_HEADER = ("meter_id", "group_id")

MAX_MISSING = 20
MIN_STD = 0.01


class IngestError(ValueError):
    """Malformed or inconsistent input files."""


@dataclass(frozen=True)
class RawReading:
    meter_id: str
    timestamp: datetime
    kwh: float  # NaN when missing


@dataclass(frozen=True)
class DroppedMeter:
    meter_id: str
    reason: str


def parse_timestamp(text: str) -> datetime:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is not None:
        ts = ts.astimezone(timezone.utc).replace(tzinfo=None)
    return ts


def _floor_hour(ts: datetime) -> datetime:
    return ts.replace(minute=0, second=0, microsecond=0)


def aggregate_to_hourly(readings, meter_id: str | None = None, group_id: str = "",
                        start: datetime | None = None, end: datetime | None = None) -> MeterSeries:
    """Sum half-hourly (or pass through hourly) readings into an hourly series.

    ``readings`` must be sorted by timestamp. The output spans from the hour
    of the first reading up to the hour of the last one, unless ``start`` /
    ``end`` (exclusive) widen or fix the span; uncovered hours are missing.
    An hour is missing if any of its constituent readings is missing, negative
    or absent.
    """
    readings = list(readings)
    if not readings:
        raise IngestError("no readings")
    meter_id = readings[0].meter_id if meter_id is None else meter_id
    half_hourly = False
    prev = None
    for r in readings:
        if r.timestamp.second or r.timestamp.microsecond or r.timestamp.minute not in (0, 30):
            raise IngestError(f"meter {meter_id}: timestamp {r.timestamp} is not on the half-hour grid")
        if prev is not None:
            if r.timestamp == prev:
                raise IngestError(f"meter {meter_id}: duplicate timestamp {r.timestamp}")
            if r.timestamp < prev:
                raise IngestError(f"meter {meter_id}: readings not sorted at {r.timestamp}")
        prev = r.timestamp
        half_hourly |= r.timestamp.minute == 30
    first = _floor_hour(readings[0].timestamp) if start is None else start
    last = _floor_hour(readings[-1].timestamp) + HOUR if end is None else end
    n = int((last - first) / HOUR)
    sums = np.zeros(n)
    counts = np.zeros(n, dtype=int)
    bad = np.zeros(n, dtype=bool)
    for r in readings:
        k = int((_floor_hour(r.timestamp) - first) / HOUR)
        if not 0 <= k < n:
            continue
        counts[k] += 1
        if np.isnan(r.kwh) or r.kwh < 0:
            bad[k] = True
        else:
            sums[k] += r.kwh
    need = 2 if half_hourly else 1
    values = np.where(bad | (counts < need), np.nan, sums)
    return MeterSeries(meter_id, group_id, first, values)


def filter_meters(group, max_missing: int = MAX_MISSING, min_std: float = MIN_STD):
    """Drop meters with too many missing hours or (almost) flat consumption.

    Returns ``(kept, dropped)`` where ``dropped`` is a list of DroppedMeter.
    """
    kept, dropped = [], []
    for m in group:
        n_missing = m.missing_count
        observed = m.values[~np.isnan(m.values)]
        if n_missing > max_missing:
            dropped.append(DroppedMeter(m.meter_id, f"{n_missing} missing hours > {max_missing}"))
        elif observed.size == 0 or np.std(observed) < min_std:
            std = float(np.std(observed)) if observed.size else float("nan")
            dropped.append(DroppedMeter(m.meter_id, f"std {std:.6g} kWh < {min_std}"))
        else:
            kept.append(m)
    return kept, dropped


def impute_locf(series: MeterSeries) -> MeterSeries:
    """Carry the last observation forward; leading gaps take the first observation."""
    v = np.array(series.values)
    miss = np.isnan(v)
    if not miss.any():
        return series
    if miss.all():
        raise IngestError(f"meter {series.meter_id}: no observed values to impute from")
    idx = np.where(~miss, np.arange(len(v)), 0)
    np.maximum.accumulate(idx, out=idx)
    first = np.argmax(~miss)
    idx[:first] = first
    return series.with_values(v[idx])


def _open_table(path, header):
    fh = open(path, newline="")
    reader = csv.reader(fh)
    try:
        got = next(reader)
    except StopIteration:
        fh.close()
        raise IngestError(f"{path}: empty file")
    got = tuple(c.strip() for c in got)
    if got != header:
        fh.close()
        missing = [c for c in header if c not in got]
        what = f"missing column {missing[0]!r}" if missing else f"unexpected columns {got}"
        raise IngestError(f"{path}:1: bad header, {what}; expected {','.join(header)}")
    return fh, reader


def _parse_float(text: str, path, lineno: int, column: str) -> float:
    text = text.strip()
    if text == "":
        return float("nan")
    try:
        return float(text)
    except ValueError:
        raise IngestError(f"{path}:{lineno}: column {column!r} is not a number: {text!r}") from None


def read_meter_file(path) -> dict[str, list[RawReading]]:
    readings = defaultdict(list)
    fh, reader = _open_table(path, METER_HEADER)
    with fh:
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise IngestError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            try:
                ts = parse_timestamp(row[1])
            except ValueError:
                raise IngestError(f"{path}:{lineno}: column 'timestamp' is not ISO-8601: {row[1]!r}") from None
            kwh = _parse_float(row[2], path, lineno, "kwh")
            readings[row[0].strip()].append(RawReading(row[0].strip(), ts, kwh))
    for rs in readings.values():
        rs.sort(key=lambda r: r.timestamp)
    return dict(readings)


def read_weather_file(path) -> WeatherSeries:
    stamps, temp, hum = [], [], []
    fh, reader = _open_table(path, WEATHER_HEADER)
    with fh:
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise IngestError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            try:
                stamps.append(parse_timestamp(row[0]))
            except ValueError:
                raise IngestError(f"{path}:{lineno}: column 'timestamp' is not ISO-8601: {row[0]!r}") from None
            temp.append(_parse_float(row[1], path, lineno, "apparent_temperature"))
            hum.append(_parse_float(row[2], path, lineno, "humidity"))
    if not stamps:
        raise IngestError(f"{path}: no weather rows")
    for k in range(1, len(stamps)):
        if stamps[k] - stamps[k - 1] != HOUR:
            raise IngestError(f"{path}:{k + 2}: weather rows must be consecutive hours")
    return WeatherSeries(stamps[0], temp, hum)


def read_segment_file(path) -> dict[str, str]:
    mapping = {}
    fh, reader = _open_table(path, SEGMENT_HEADER)
    with fh:
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise IngestError(f"{path}:{lineno}: expected 2 fields, got {len(row)}")
            meter, group = row[0].strip(), row[1].strip()
            if meter in mapping and mapping[meter] != group:
                raise IngestError(f"{path}:{lineno}: meter {meter} mapped to two groups")
            mapping[meter] = group
    return mapping


def build_group(group_id: str, raw: dict[str, list[RawReading]], weather: WeatherSeries,
                meter_ids, max_missing: int = MAX_MISSING, min_std: float = MIN_STD):
    """Aggregate, filter and impute one group's meters on a common hourly span.

    Returns ``(GroupDataset | None, dropped)``; ``None`` when nothing survives.
    """
    meter_ids = sorted(meter_ids)
    for m in meter_ids:
        if m not in raw:
            raise IngestError(f"segment file lists meter {m!r} which has no readings")
    start = min(_floor_hour(raw[m][0].timestamp) for m in meter_ids)
    end = max(_floor_hour(raw[m][-1].timestamp) for m in meter_ids) + HOUR
    n_hours = int((end - start) / HOUR)
    w_end = weather.start + len(weather) * HOUR
    if weather.start > start or w_end < end:
        raise IngestError(
            f"group {group_id}: weather covers {weather.start}..{w_end} but meters need {start}..{end}")
    series = [aggregate_to_hourly(raw[m], m, group_id, start, end) for m in meter_ids]
    kept, dropped = filter_meters(series, max_missing, min_std)
    for d in dropped:
        log.info("group %s: dropped meter %s (%s)", group_id, d.meter_id, d.reason)
    if not kept:
        return None, dropped
    kept = [impute_locf(m) for m in kept]
    dataset = GroupDataset(group_id, kept, weather.slice(start, n_hours))
    problems = validate_group(dataset)
    if problems:
        raise IngestError(f"group {group_id}: " + "; ".join(problems))
    return dataset, dropped


def load_groups(meter_file, weather_file, segment_file, **filter_kw):
    """Load every group named in the segment file. Returns {group_id: (dataset, dropped)}."""
    raw = read_meter_file(meter_file)
    weather = read_weather_file(weather_file)
    segments = read_segment_file(segment_file)
    by_group = defaultdict(list)
    for meter, group in segments.items():
        by_group[group].append(meter)
    return {g: build_group(g, raw, weather, ids, **filter_kw) for g, ids in sorted(by_group.items())}


def load_group(meter_file, weather_file, segment_file, group_id: str, **filter_kw) -> GroupDataset:
    raw = read_meter_file(meter_file)
    weather = read_weather_file(weather_file)
    segments = read_segment_file(segment_file)
    ids = [m for m, g in segments.items() if g == group_id]
    if not ids:
        raise IngestError(f"no meters mapped to group {group_id!r} in {segment_file}")
    dataset, _ = build_group(group_id, raw, weather, ids, **filter_kw)
    if dataset is None:
        raise IngestError(f"group {group_id}: every meter was filtered out")
    return dataset


def write_meter_file(path, meters, digits: int = 6) -> None:
    """Write hourly series in the meter-file format (empty kwh for missing)."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METER_HEADER)
        for m in meters:
            for k, v in enumerate(m.values):
                ts = (m.start + k * HOUR).isoformat()
                w.writerow([m.meter_id, ts, "" if np.isnan(v) else f"{v:.{digits}g}"])


def write_weather_file(path, weather: WeatherSeries, digits: int = 6) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(WEATHER_HEADER)
        for k in range(len(weather)):
            w.writerow([(weather.start + k * HOUR).isoformat(),
                        f"{weather.apparent_temperature[k]:.{digits}g}",
                        f"{weather.humidity[k]:.{digits}g}"])


def write_segment_file(path, mapping) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SEGMENT_HEADER)
        for meter, group in mapping:
            w.writerow([meter, group])
