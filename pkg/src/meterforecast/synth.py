"""Seeded synthetic smart-meter groups for tests and desk-scale back-tests.

Each meter follows

    z[m, t] = max(0, s[m] * (base + daily(t) + weekly(t) + beta[m] * (T[t] - Tbar) + eps[m, t]))

with a per-meter scale ``s[m]`` (so mean and std move together across
meters), a shared temperature series, and optional contiguous zero spells.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from datetime import datetime

import numpy as np

from .data_model import GroupDataset, MeterSeries, WeatherSeries


@dataclass(frozen=True)
class SynthConfig:
    n_meters: int = 100
    n_hours: int = 8760
    base_load: float = 0.5
    daily_amplitude: float = 0.3
    weekly_amplitude: float = 0.1
    temperature_sensitivity: float = 0.02
    noise_std: float = 0.1
    zero_inflation: float = 0.01
    mean_spell_hours: float = 48.0
    weather_noise_std: float = 1.5
    scale_spread: float = 0.5
    group_id: str = "SYNTH"
    start: str = "2013-01-01T00:00"
    seed: int = 0

    def __post_init__(self):
        if self.n_meters < 1 or self.n_hours < 1:
            raise ValueError("n_meters and n_hours must be positive")
        for name in ("base_load", "daily_amplitude", "weekly_amplitude", "noise_std",
                     "weather_noise_std", "scale_spread"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0.0 <= self.zero_inflation <= 1.0:
            raise ValueError("zero_inflation must lie in [0, 1]")
        if self.mean_spell_hours < 1:
            raise ValueError("mean_spell_hours must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown synth keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def daily_profile(hour: np.ndarray) -> np.ndarray:
    """Unit-amplitude daily shape: night trough, morning bump, evening peak."""
    h = np.asarray(hour, dtype=np.float64)
    smooth = np.sin(2 * np.pi * (h - 9) / 24)
    morning = ((h >= 7) & (h < 9)).astype(float) * 0.5
    evening = ((h >= 17) & (h < 22)).astype(float)
    return 0.5 * smooth + morning + evening - 0.35


def weekly_profile(dow: np.ndarray, hour: np.ndarray) -> np.ndarray:
    """Weekend daytime uplift, zero-mean over a week."""
    weekend = (np.asarray(dow) >= 5) & (np.asarray(hour) >= 9) & (np.asarray(hour) < 17)
    return weekend.astype(float) - 16.0 / 168.0


def _zero_spells(rng: np.random.Generator, n: int, prob: float, mean_len: float) -> np.ndarray:
    """Boolean mask of contiguous spells covering about ``prob`` of the hours."""
    mask = np.zeros(n, dtype=bool)
    if prob <= 0:
        return mask
    if prob >= 1:
        mask[:] = True
        return mask
    # spell starts arrive so that the expected covered fraction is prob
    start_rate = prob / (mean_len * (1 - prob) + prob)
    t = 0
    while t < n:
        if rng.random() < start_rate:
            length = int(rng.geometric(1.0 / mean_len))
            mask[t:t + length] = True
            t += length
        else:
            t += 1
    return mask


def generate_weather(cfg: SynthConfig, rng: np.random.Generator, start: datetime) -> WeatherSeries:
    n = cfg.n_hours
    hours = (start.hour + np.arange(n)) % 24
    anomaly = np.zeros(n)
    if cfg.weather_noise_std > 0:
        phi = 0.98
        shocks = rng.normal(0.0, cfg.weather_noise_std * np.sqrt(1 - phi ** 2), n)
        anomaly[0] = rng.normal(0.0, cfg.weather_noise_std)
        for t in range(1, n):
            anomaly[t] = phi * anomaly[t - 1] + shocks[t]
    temp = 10.0 + 4.0 * np.sin(2 * np.pi * (hours - 9) / 24) + anomaly
    hum_noise = rng.normal(0.0, 0.03, n) if cfg.weather_noise_std > 0 else np.zeros(n)
    humidity = np.clip(0.75 - 0.15 * np.sin(2 * np.pi * (hours - 9) / 24)
                       - 0.01 * anomaly + hum_noise, 0.05, 1.0)
    return WeatherSeries(start, temp, humidity)


def generate_group(cfg: SynthConfig) -> GroupDataset:
    start = datetime.fromisoformat(cfg.start)
    root = np.random.SeedSequence(cfg.seed)
    weather_seq, *meter_seqs = root.spawn(cfg.n_meters + 1)
    weather = generate_weather(cfg, np.random.default_rng(weather_seq), start)
    n = cfg.n_hours
    abs_hours = start.hour + np.arange(n)
    hours = abs_hours % 24
    dows = (start.weekday() + abs_hours // 24) % 7
    shape = (cfg.base_load + cfg.daily_amplitude * daily_profile(hours)
             + cfg.weekly_amplitude * weekly_profile(dows, hours))
    t_anom = weather.apparent_temperature - 10.0
    meters = []
    width = len(str(cfg.n_meters - 1))
    for m, seq in enumerate(meter_seqs):
        rng = np.random.default_rng(seq)
        scale = float(np.exp(rng.normal(0.0, cfg.scale_spread)))
        beta = -cfg.temperature_sensitivity * float(rng.uniform(0.5, 1.5))
        noise = rng.normal(0.0, cfg.noise_std, n) if cfg.noise_std > 0 else np.zeros(n)
        z = np.maximum(0.0, scale * (shape + beta * t_anom + noise))
        z[_zero_spells(rng, n, cfg.zero_inflation, cfg.mean_spell_hours)] = 0.0
        meters.append(MeterSeries(f"M{m:0{width}d}", cfg.group_id, start, z))
    return GroupDataset(cfg.group_id, meters, weather)
