"""Run configuration files (TOML).

One file carries every knob of a run. Recognised tables::

    [train]     keys of TrainConfig (epochs, batch_size, learning_rate, ...)
    [plan]      seed, train_fraction, n_train, train_hours
    [backtest]  methods, arima_refit_days, arima_max_history, workers
    [synth]     keys of SynthConfig
    [ingest]    max_missing, min_std
    [forecast]  meter_id, origin

Missing keys take their defaults; unknown keys are errors.
"""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .backtest import BacktestConfig
from .ingestion import MAX_MISSING, MIN_STD
from .lstm.model import TrainConfig
from .synth import SynthConfig

SECTIONS = ("train", "plan", "backtest", "synth", "ingest", "forecast")


@dataclass
class PlanConfig:
    seed: int = 0
    train_fraction: float = 0.8
    n_train: int | None = None
    train_hours: int | None = None


@dataclass
class IngestConfig:
    max_missing: int = MAX_MISSING
    min_std: float = MIN_STD


@dataclass
class ForecastConfig:
    meter_id: str | None = None
    origin: str | None = None


def _build(cls, d: dict, section: str):
    unknown = set(d) - set(cls.__dataclass_fields__)
    if unknown:
        raise ValueError(f"[{section}]: unknown keys {sorted(unknown)}")
    return cls(**d)


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    plan: PlanConfig = field(default_factory=PlanConfig)
    backtest: BacktestConfig = field(default_factory=BacktestConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    ingest: IngestConfig = field(default_factory=IngestConfig)
    forecast: ForecastConfig = field(default_factory=ForecastConfig)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = set(d) - set(SECTIONS)
        if unknown:
            raise ValueError(f"unknown config sections {sorted(unknown)}")
        bt = dict(d.get("backtest", {}))
        if "methods" in bt:
            bt["methods"] = tuple(bt["methods"])
        return cls(
            train=TrainConfig.from_dict(d.get("train", {})),
            plan=_build(PlanConfig, d.get("plan", {}), "plan"),
            backtest=_build(BacktestConfig, bt, "backtest"),
            synth=SynthConfig.from_dict(d.get("synth", {})),
            ingest=_build(IngestConfig, d.get("ingest", {}), "ingest"),
            forecast=_build(ForecastConfig, d.get("forecast", {}), "forecast"),
        )

    def to_dict(self) -> dict:
        out = {}
        for name in SECTIONS:
            sec = getattr(self, name)
            d = sec.to_dict() if hasattr(sec, "to_dict") else asdict(sec)
            out[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
        return out


def load_config(path=None) -> RunConfig:
    """Read a TOML run file; ``None`` gives all defaults."""
    if path is None:
        return RunConfig()
    with Path(path).open("rb") as fh:
        return RunConfig.from_dict(tomllib.load(fh))


def dump_toml(d: dict) -> str:
    """Render a flat two-level dict as TOML (None values omitted)."""
    lines = []
    for section, values in d.items():
        lines.append(f"[{section}]")
        for k, v in values.items():
            if v is None:
                continue
            lines.append(f"{k} = {_toml_value(v)}")
        lines.append("")
    return "\n".join(lines)


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return '"' + str(v).replace("\\", "\\\\").replace('"', '\\"') + '"'
