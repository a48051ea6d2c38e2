"""Core domain types shared across the package.

Consumption values are hourly kWh in float64. Before imputation a missing
hour is stored as NaN; it always occupies its slot, so a series never has
gaps in its time index.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date, datetime, timedelta

import numpy as np

HOUR = timedelta(hours=1)
METHODS = ("naive", "arima", "lstm")


def _frozen_array(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    arr.setflags(write=False)
    return arr


def hour_aligned(ts: datetime) -> bool:
    return ts.minute == 0 and ts.second == 0 and ts.microsecond == 0


@dataclass(frozen=True)
class MeterSeries:
    meter_id: str
    group_id: str
    start: datetime
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen_array(self.values))
        if self.values.ndim != 1:
            raise ValueError(f"meter {self.meter_id}: values must be one-dimensional")

    def __len__(self) -> int:
        return len(self.values)

    @property
    def missing_count(self) -> int:
        return int(np.isnan(self.values).sum())

    @property
    def end(self) -> datetime:
        return self.start + len(self) * HOUR

    def with_values(self, values) -> "MeterSeries":
        return MeterSeries(self.meter_id, self.group_id, self.start, values)


@dataclass(frozen=True)
class WeatherSeries:
    start: datetime
    apparent_temperature: np.ndarray = field(repr=False)
    humidity: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "apparent_temperature", _frozen_array(self.apparent_temperature))
        object.__setattr__(self, "humidity", _frozen_array(self.humidity))
        if len(self.apparent_temperature) != len(self.humidity):
            raise ValueError("temperature and humidity lengths differ")

    def __len__(self) -> int:
        return len(self.humidity)

    def slice(self, start: datetime, n_hours: int) -> "WeatherSeries":
        offset = int((start - self.start) / HOUR)
        if offset < 0 or offset + n_hours > len(self):
            raise ValueError(
                f"weather covers {self.start}..{self.start + len(self) * HOUR}, "
                f"need {start}..{start + n_hours * HOUR}")
        sl = slice(offset, offset + n_hours)
        return WeatherSeries(start, self.apparent_temperature[sl], self.humidity[sl])


@dataclass(frozen=True)
class CalendarVector:
    """Hour-of-day dummies for hours 1..23 and day-of-week dummies Tue..Sun.

    Hour 0 and Monday are the reference levels (all zeros).
    """

    hour_dummies: tuple
    dow_dummies: tuple

    @classmethod
    def from_timestamp(cls, ts: datetime) -> "CalendarVector":
        hours = [0] * 23
        dows = [0] * 6
        if ts.hour > 0:
            hours[ts.hour - 1] = 1
        if ts.weekday() > 0:
            dows[ts.weekday() - 1] = 1
        return cls(tuple(hours), tuple(dows))

    def as_array(self) -> np.ndarray:
        return np.array(self.hour_dummies + self.dow_dummies, dtype=np.float64)


def calendar_matrix(start: datetime, n_hours: int) -> np.ndarray:
    """(n_hours, 29) matrix of calendar dummies, hour block then weekday block."""
    hours = (start.hour + np.arange(n_hours)) % 24
    day0 = start.weekday()
    dows = (day0 + (start.hour + np.arange(n_hours)) // 24) % 7
    out = np.zeros((n_hours, 29))
    rows = np.arange(n_hours)
    h = hours > 0
    out[rows[h], hours[h] - 1] = 1.0
    d = dows > 0
    out[rows[d], 23 + dows[d] - 1] = 1.0
    return out


@dataclass(frozen=True)
class GroupDataset:
    group_id: str
    meters: tuple
    weather: WeatherSeries
    aggregate: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "meters", tuple(self.meters))
        if self.aggregate is not None:
            object.__setattr__(self, "aggregate", _frozen_array(self.aggregate))

    @property
    def meter_ids(self) -> list[str]:
        return [m.meter_id for m in self.meters]

    @property
    def start(self) -> datetime:
        return self.meters[0].start

    @property
    def n_hours(self) -> int:
        return len(self.meters[0])

    def meter(self, meter_id: str) -> MeterSeries:
        for m in self.meters:
            if m.meter_id == meter_id:
                return m
        raise KeyError(f"unknown meter {meter_id!r} in group {self.group_id!r}")

    def matrix(self, meter_ids=None) -> np.ndarray:
        """Consumption as an (n_meters, n_hours) array."""
        ids = self.meter_ids if meter_ids is None else list(meter_ids)
        return np.stack([self.meter(i).values for i in ids])

    def with_aggregate(self, aggregate) -> "GroupDataset":
        return GroupDataset(self.group_id, self.meters, self.weather, aggregate)


@dataclass(frozen=True)
class ForecastSet:
    method_id: str
    meter_id: str
    origin_day: date
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.method_id not in METHODS:
            raise ValueError(f"unknown method {self.method_id!r}")
        object.__setattr__(self, "values", _frozen_array(self.values))
        if self.values.shape != (24,):
            raise ValueError(f"forecast must have 24 values, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("forecast contains non-finite values")
        if np.any(self.values < 0):
            raise ValueError("forecast contains negative kWh")


def validate_group(dataset: GroupDataset) -> list[str]:
    """List every broken invariant of ``dataset``; empty when the group is sound.

    Each message starts with the offending meter id (or ``weather`` /
    ``aggregate``) followed by the rule that failed.
    """
    problems = []
    if not dataset.meters:
        return [f"{dataset.group_id}: empty group"]
    ref = dataset.meters[0]
    for m in dataset.meters:
        if not hour_aligned(m.start):
            problems.append(f"{m.meter_id}: start not hour-aligned")
        if m.start != ref.start:
            problems.append(f"{m.meter_id}: misaligned start ({m.start} vs {ref.start})")
        if len(m) != len(ref):
            problems.append(f"{m.meter_id}: length {len(m)} differs from {len(ref)}")
        if m.group_id != dataset.group_id:
            problems.append(f"{m.meter_id}: group tag {m.group_id!r} != {dataset.group_id!r}")
        observed = m.values[~np.isnan(m.values)]
        if np.any(~np.isfinite(observed)):
            problems.append(f"{m.meter_id}: non-finite consumption")
        if np.any(observed < 0):
            problems.append(f"{m.meter_id}: negative consumption")
    w = dataset.weather
    if w.start != ref.start:
        problems.append(f"weather: misaligned start ({w.start} vs {ref.start})")
    if len(w) != len(ref):
        problems.append(f"weather: length {len(w)} differs from meter horizon {len(ref)}")
    hum = w.humidity
    if np.any(np.isnan(hum)) or np.any((hum < 0) | (hum > 1)):
        problems.append("weather: humidity out of range")
    if not np.all(np.isfinite(w.apparent_temperature)):
        problems.append("weather: non-finite apparent temperature")
    if dataset.aggregate is not None and len(dataset.aggregate) != len(ref):
        problems.append(f"aggregate: length {len(dataset.aggregate)} differs from {len(ref)}")
    return problems
