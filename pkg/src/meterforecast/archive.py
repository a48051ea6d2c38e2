"""Group archives: one validated, imputed group per ``.npz`` file."""

from __future__ import annotations

from datetime import datetime
from pathlib import Path

import numpy as np

from .data_model import GroupDataset, MeterSeries, WeatherSeries

ARCHIVE_VERSION = 1


def save_group(group: GroupDataset, path) -> Path:
    path = Path(path)
    np.savez(path, version=np.array(ARCHIVE_VERSION), group_id=np.array(group.group_id),
             meter_ids=np.array(group.meter_ids), start=np.array(group.start.isoformat()),
             values=group.matrix(), weather_start=np.array(group.weather.start.isoformat()),
             temperature=group.weather.apparent_temperature, humidity=group.weather.humidity)
    return path if path.suffix == ".npz" else path.with_name(path.name + ".npz")


def load_group_archive(path) -> GroupDataset:
    with np.load(path, allow_pickle=False) as z:
        version = int(z["version"])
        if version != ARCHIVE_VERSION:
            raise ValueError(f"{path}: archive version {version}, expected {ARCHIVE_VERSION}")
        gid = str(z["group_id"])
        start = datetime.fromisoformat(str(z["start"]))
        meters = [MeterSeries(str(m), gid, start, v) for m, v in zip(z["meter_ids"], z["values"])]
        weather = WeatherSeries(datetime.fromisoformat(str(z["weather_start"])),
                                z["temperature"], z["humidity"])
    return GroupDataset(gid, meters, weather)
