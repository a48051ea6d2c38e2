"""Seasonal naive forecast: tomorrow repeats the last 24 hours."""

from __future__ import annotations

from datetime import date

import numpy as np

from ..data_model import ForecastSet

SEASON = 24


def seasonal_naive_forecast(history, origin_day: date, meter_id: str = "") -> ForecastSet:
    """Forecast hours origin..origin+23 as the observations at origin-24..origin-1.

    ``history`` holds the hourly kWh values strictly before the origin.
    """
    history = np.asarray(history, dtype=np.float64)
    if len(history) < SEASON:
        raise ValueError(f"seasonal naive needs {SEASON} hours of history, got {len(history)}")
    return ForecastSet("naive", meter_id, origin_day, history[-SEASON:])
