"""Training loop, the persisted model object, and 24-hour inference."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from datetime import date, datetime

import numpy as np

from ..data_model import HOUR, ForecastSet
from ..features import (FEATURE_ORDER, TIMESTEPS, FeatureTensor, NormStats,
                        feature_matrix, inverse_transform, log_stats)
from .adam import AdamState, adam_step
from .network import DropoutMasks, Network, forward, loss_and_grads, param_count

log = logging.getLogger(__name__)


class TrainingDivergedError(FloatingPointError):
    def __init__(self, epoch: int, batch: int, loss: float):
        self.epoch, self.batch, self.loss = epoch, batch, loss
        super().__init__(f"non-finite loss {loss} at epoch {epoch}, batch {batch}")


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 1000
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    dropout_input1: float = 0.10
    dropout_recurrent1: float = 0.10
    dropout_input2: float = 0.05
    dropout_recurrent2: float = 0.05
    hidden1: int = 32
    hidden2: int = 16
    seed: int = 0

    def __post_init__(self):
        for name in ("dropout_input1", "dropout_recurrent1", "dropout_input2", "dropout_recurrent2"):
            rate = getattr(self, name)
            if not 0.0 <= rate < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {rate}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")

    @property
    def dropout_rates(self) -> tuple[float, float, float, float]:
        return (self.dropout_input1, self.dropout_recurrent1,
                self.dropout_input2, self.dropout_recurrent2)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LstmModel:
    network: Network
    norm_stats: NormStats
    feature_order: tuple = FEATURE_ORDER
    training_meta: dict = field(default_factory=dict)

    @property
    def n_params(self) -> int:
        return param_count(self.network)

    def meter_stats(self, meter_id: str, history=None) -> tuple[float, float]:
        """Stats for a training meter, or from ``history`` for an unseen one."""
        if meter_id in self.norm_stats.meters:
            return self.norm_stats.meters[meter_id]
        if history is None:
            raise KeyError(f"meter {meter_id!r} unseen in training and no history given")
        return log_stats(history)

    def predict_normalized(self, windows: np.ndarray, chunk: int = 4096) -> np.ndarray:
        """Inference-mode forward pass over (B, 24, 33) windows."""
        windows = np.asarray(windows, dtype=np.float64)
        if len(windows) == 0:
            return np.empty((0, self.network.horizon))
        return np.concatenate([forward(self.network, windows[i:i + chunk])
                               for i in range(0, len(windows), chunk)])


@dataclass
class TrainResult:
    model: LstmModel
    loss_trace: list


def train(tensor: FeatureTensor, config: TrainConfig | None = None,
          norm_stats: NormStats | None = None, progress=None) -> TrainResult:
    """Fit a fresh network on ``tensor`` with mini-batch Adam on the MAE loss.

    Rows are reshuffled every epoch and the last partial batch is kept.
    ``progress`` is called as ``progress(epoch, mean_loss)`` when given.
    """
    config = config or TrainConfig()
    n = len(tensor)
    if n == 0:
        raise ValueError("empty training tensor")
    rng = np.random.default_rng(config.seed)
    net = Network.initialize(tensor.design.shape[2], config.hidden1, config.hidden2,
                             tensor.target.shape[1], rng)
    params = net.arrays()
    state = AdamState.zeros_like(params)
    rates = config.dropout_rates
    use_dropout = any(r > 0 for r in rates)
    trace = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for b, lo in enumerate(range(0, n, config.batch_size)):
            idx = order[lo:lo + config.batch_size]
            x, y = tensor.design[idx], tensor.target[idx]
            masks = DropoutMasks.sample(rng, len(idx), net, rates) if use_dropout else None
            loss, grads = loss_and_grads(net, x, y, masks)
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch, b, loss)
            adam_step(params, grads, state, config.learning_rate, config.beta1,
                      config.beta2, config.epsilon)
            total += loss * len(idx)
        trace.append(total / n)
        log.info("epoch %d/%d loss %.6f", epoch, config.epochs, trace[-1])
        if progress is not None:
            progress(epoch, trace[-1])
    meta = {"epochs": config.epochs, "learning_rate": config.learning_rate,
            "seed": config.seed, "config": config.to_dict(), "n_samples": n,
            "training_meters": list(tensor.meter_ids)}
    model = LstmModel(net, norm_stats or NormStats(), FEATURE_ORDER, meta)
    return TrainResult(model, trace)


def forecast_window(model: LstmModel, history, aggregate, temperature, humidity,
                    origin: datetime, meter_stats: tuple[float, float]) -> np.ndarray:
    """The (24, 33) design window for a forecast issued at ``origin``.

    All inputs are hourly arrays ending at the hour just before ``origin``.
    """
    sl = slice(-TIMESTEPS, None)
    start = origin - TIMESTEPS * HOUR
    return feature_matrix(np.asarray(history)[sl], np.asarray(aggregate)[sl],
                          np.asarray(temperature)[sl], np.asarray(humidity)[sl],
                          start, meter_stats, model.norm_stats)


def predict_24h(model: LstmModel, meter_id: str, history, aggregate, temperature, humidity,
                origin: datetime, meter_stats: tuple[float, float] | None = None) -> ForecastSet:
    """Forecast the 24 hours starting at ``origin`` for one meter.

    Works for meters absent from training: their (mu, sigma) come from
    ``history`` unless ``meter_stats`` is given.
    """
    history = np.asarray(history, dtype=np.float64)
    for name, arr in (("history", history), ("aggregate", aggregate),
                      ("temperature", temperature), ("humidity", humidity)):
        if len(arr) < TIMESTEPS:
            raise ValueError(f"{name} has {len(arr)} hours, need at least {TIMESTEPS}")
    if np.isnan(history[-TIMESTEPS:]).any():
        raise ValueError("the last 24 hours of history contain missing values")
    stats = meter_stats or model.meter_stats(meter_id, history)
    window = forecast_window(model, history, aggregate, temperature, humidity, origin, stats)
    y = model.predict_normalized(window[None])[0]
    day = origin.date() if isinstance(origin, datetime) else date.fromisoformat(str(origin))
    return ForecastSet("lstm", meter_id, day, inverse_transform(y, *stats))
