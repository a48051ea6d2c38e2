"""Normalization and sliding-window tensors for the pooled LSTM.

Feature layout of every timestep (33 columns):

====== ============================================
index  feature
====== ============================================
0      own consumption, log1p then per-meter z-score
1      group aggregate (training meters), same transform
2      apparent temperature, z-score on the train window
3      humidity, z-score on the train window
4-26   hour-of-day dummies, hours 1..23
27-32  day-of-week dummies, Tuesday..Sunday
====== ============================================
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime

import numpy as np

from .data_model import HOUR, GroupDataset, calendar_matrix

TIMESTEPS = 24
HORIZON = 24
DOW_NAMES = ("tue", "wed", "thu", "fri", "sat", "sun")
FEATURE_ORDER = (
    ("consumption", "aggregate", "apparent_temperature", "humidity")
    + tuple(f"hour_{h}" for h in range(1, 24))
    + tuple(f"dow_{d}" for d in DOW_NAMES)
)
N_FEATURES = len(FEATURE_ORDER)
SIGMA_FLOOR = 1e-9


class DegenerateSeriesError(ValueError):
    """A series whose log-consumption has (numerically) zero spread."""


def transform(z, mu: float, sigma: float):
    """log1p followed by standardization with (mu, sigma)."""
    if not sigma > 0:
        raise DegenerateSeriesError(f"sigma must be positive, got {sigma}")
    return (np.log1p(z) - mu) / sigma


def inverse_transform(y, mu: float, sigma: float):
    """Back to kWh, clamped at zero."""
    return np.maximum(0.0, np.expm1(np.asarray(y) * sigma + mu))


def log_stats(values) -> tuple[float, float]:
    """(mean, population std) of log1p(values)."""
    lv = np.log1p(np.asarray(values, dtype=np.float64))
    return float(lv.mean()), float(lv.std())


@dataclass
class NormStats:
    meters: dict = field(default_factory=dict)  # meter_id -> (mu, sigma)
    aggregate: tuple = (0.0, 1.0)
    temperature: tuple = (0.0, 1.0)  # plain mean/std, no log
    humidity: tuple = (0.0, 1.0)

    def for_meter(self, meter_id: str) -> tuple[float, float]:
        try:
            return self.meters[meter_id]
        except KeyError:
            raise KeyError(f"no normalization stats for meter {meter_id!r}") from None


def compute_aggregate(group: GroupDataset, training_meter_ids) -> np.ndarray:
    """Hourly sum over the training meters only."""
    ids = list(training_meter_ids)
    if not ids:
        raise ValueError("aggregate needs at least one training meter")
    return group.matrix(ids).sum(axis=0)


def _checked(mu: float, sigma: float, name: str) -> tuple[float, float]:
    if sigma < SIGMA_FLOOR:
        raise DegenerateSeriesError(f"{name}: log-consumption std {sigma:.3g} is numerically zero")
    return mu, sigma


def fit_norm_stats(group: GroupDataset, train_hours: int, meter_ids=None) -> NormStats:
    """Fit all scaling statistics on the first ``train_hours`` hours only.

    ``group.aggregate`` must already be set (see :func:`compute_aggregate`).
    """
    if train_hours > group.n_hours:
        raise ValueError(f"train_hours {train_hours} exceeds series length {group.n_hours}")
    if train_hours < 2:
        raise ValueError("need at least two training hours")
    if group.aggregate is None:
        raise ValueError("group aggregate not computed")
    ids = group.meter_ids if meter_ids is None else list(meter_ids)
    meters = {m: _checked(*log_stats(group.meter(m).values[:train_hours]), m) for m in ids}
    agg = _checked(*log_stats(group.aggregate[:train_hours]), "aggregate")
    temp = group.weather.apparent_temperature[:train_hours]
    hum = group.weather.humidity[:train_hours]
    t_sd = float(temp.std()) or 1.0
    h_sd = float(hum.std()) or 1.0
    return NormStats(meters, agg, (float(temp.mean()), t_sd), (float(hum.mean()), h_sd))


def feature_matrix(consumption, aggregate, temperature, humidity, start: datetime,
                   meter_stats: tuple[float, float], stats: NormStats) -> np.ndarray:
    """(hours, 33) per-hour feature rows for one meter."""
    n = len(consumption)
    out = np.empty((n, N_FEATURES))
    out[:, 0] = transform(consumption, *meter_stats)
    out[:, 1] = transform(aggregate, *stats.aggregate)
    out[:, 2] = (np.asarray(temperature) - stats.temperature[0]) / stats.temperature[1]
    out[:, 3] = (np.asarray(humidity) - stats.humidity[0]) / stats.humidity[1]
    out[:, 4:] = calendar_matrix(start, n)
    return out


def group_features(group: GroupDataset, stats: NormStats, meter_ids, lo: int = 0,
                   hi: int | None = None, meter_stats=None) -> np.ndarray:
    """(n_meters, hi-lo, 33) features over hours [lo, hi).

    ``meter_stats`` optionally overrides the per-meter (mu, sigma) pairs.
    """
    hi = group.n_hours if hi is None else hi
    start = group.start + lo * HOUR
    agg = group.aggregate[lo:hi]
    temp = group.weather.apparent_temperature[lo:hi]
    hum = group.weather.humidity[lo:hi]
    rows = []
    for m in meter_ids:
        ms = meter_stats[m] if meter_stats is not None else stats.for_meter(m)
        rows.append(feature_matrix(group.meter(m).values[lo:hi], agg, temp, hum, start, ms, stats))
    return np.stack(rows)


@dataclass
class FeatureTensor:
    design: np.ndarray  # (samples, 24, 33)
    target: np.ndarray  # (samples, 24)
    meter_ids: list  # index space for sample_meter
    sample_meter: np.ndarray  # (samples,) index into meter_ids
    sample_origin: np.ndarray  # (samples,) absolute origin hour

    def __len__(self) -> int:
        return len(self.target)

    @property
    def sample_index(self) -> list[tuple[str, int]]:
        return [(self.meter_ids[i], int(t)) for i, t in zip(self.sample_meter, self.sample_origin)]


def build_windows(group: GroupDataset, stats: NormStats, hours_range: tuple[int, int],
                  stride: int = 1, meter_ids=None) -> FeatureTensor:
    """Sliding (24-hour design, next-24-hour target) pairs per meter.

    Only hours inside ``hours_range = (lo, hi)`` are read, so a training tensor
    built on ``(0, train_hours)`` never sees the test period.
    """
    lo, hi = hours_range
    if hi - lo < TIMESTEPS + HORIZON:
        raise ValueError(f"hours range {hours_range} shorter than {TIMESTEPS + HORIZON} hours")
    if lo < 0 or hi > group.n_hours:
        raise ValueError(f"hours range {hours_range} outside series of {group.n_hours} hours")
    ids = group.meter_ids if meter_ids is None else list(meter_ids)
    feats = group_features(group, stats, ids, lo, hi)
    origins = np.arange(TIMESTEPS, hi - lo - HORIZON + 1, stride)
    offs = np.arange(-TIMESTEPS, 0)
    tgt_offs = np.arange(HORIZON)
    n_o = len(origins)
    design = np.empty((len(ids) * n_o, TIMESTEPS, N_FEATURES))
    target = np.empty((len(ids) * n_o, HORIZON))
    for k in range(len(ids)):
        design[k * n_o:(k + 1) * n_o] = feats[k][origins[:, None] + offs]
        target[k * n_o:(k + 1) * n_o] = feats[k, :, 0][origins[:, None] + tgt_offs]
    return FeatureTensor(
        design, target, ids,
        np.repeat(np.arange(len(ids)), n_o),
        np.tile(origins + lo, len(ids)),
    )
