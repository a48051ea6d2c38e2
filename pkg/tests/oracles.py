"""Independent reference computations used by the tests.

Nothing here imports the package under test, so agreement with it is evidence
rather than tautology.
"""

from __future__ import annotations

import csv
import math
from datetime import datetime, timedelta

import numpy as np

LD = np.longdouble


def _sig(x):
    return 1 / (1 + np.exp(-x))


def lstm_batched_loss(params, x, y, masks):
    """Mean absolute error of a two-layer LSTM + dense head, for P weight sets at once.

    Every array in ``params`` carries a leading perturbation axis of size P.
    Gate blocks are stacked input, forget, candidate, output. Computed in
    long double so finite differences are dominated by truncation error.
    """
    W1, U1, b1, W2, U2, b2, Wd, bd = [np.asarray(p, dtype=LD) for p in params]
    x = np.asarray(x, LD)
    y = np.asarray(y, LD)
    m = [np.asarray(a, LD) for a in masks]

    def layer(inp, W, U, b, mi, mr):
        P, H = W.shape[0], U.shape[2]
        B, T = inp.shape[1], inp.shape[2]
        h = np.zeros((P, B, H), LD)
        c = np.zeros((P, B, H), LD)
        out = []
        for t in range(T):
            xt = inp[:, :, t, :] * mi
            z = np.einsum("pbi,pgi->pbg", xt, W) + np.einsum("pbh,pgh->pbg", h * mr, U) + b[:, None, :]
            i, f = _sig(z[..., :H]), _sig(z[..., H:2 * H])
            g, o = np.tanh(z[..., 2 * H:3 * H]), _sig(z[..., 3 * H:])
            c = f * c + i * g
            h = o * np.tanh(c)
            out.append(h)
        return np.stack(out, axis=2)

    x = np.broadcast_to(x, (W1.shape[0],) + x.shape)
    h1 = layer(x, W1, U1, b1, m[0], m[1])
    h2 = layer(h1, W2, U2, b2, m[2], m[3])
    pred = np.einsum("pbh,pkh->pbk", h2[:, :, -1], Wd) + bd[:, None, :]
    return np.abs(pred - y).mean(axis=(1, 2))


def finite_difference_grads(arrays, x, y, masks, step=1e-5):
    """Central differences for every scalar in ``arrays`` (list of 8 weight arrays)."""
    base = [np.asarray(a, LD) for a in arrays]
    n = sum(a.size for a in base)
    stacked = [np.broadcast_to(a, (2 * n,) + a.shape).copy() for a in base]
    k = 0
    for ai, a in enumerate(base):
        for idx in np.ndindex(a.shape):
            stacked[ai][(2 * k,) + idx] += LD(step)
            stacked[ai][(2 * k + 1,) + idx] -= LD(step)
            k += 1
    losses = lstm_batched_loss(stacked, x, y, masks)
    g = (losses[0::2] - losses[1::2]) / (2 * LD(step))
    out, o = [], 0
    for a in arrays:
        out.append(g[o:o + a.size].reshape(a.shape).astype(np.float64))
        o += a.size
    return out


def adam_scalar(theta, grads, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    """Hand-rolled scalar Adam; returns the parameter after each step."""
    m = v = 0.0
    out = []
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
        out.append(theta)
    return out


def read_hourly_csv(path):
    """meter_id -> {timestamp: kWh} straight from an hourly meter file."""
    series = {}
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        next(rows)
        for meter, ts, kwh in rows:
            series.setdefault(meter, {})[datetime.fromisoformat(ts)] = float(kwh)
    return series


def naive_mae_brute_force(series: dict, origin: datetime) -> float:
    """MAE of 'tomorrow equals today' for the 24 hours from ``origin``."""
    hour = timedelta(hours=1)
    diffs = [abs(series[origin - 24 * hour + k * hour] - series[origin + k * hour])
             for k in range(24)]
    return math.fsum(diffs) / 24


def table1_train_hours(n_meters: int) -> int:
    """Nearest multiple of 720 to 450000/n, clamped to [720, 7200], by enumeration."""
    target = 450000 / n_meters
    best = min(range(720, 7201, 720), key=lambda h: (abs(h - target), -h))  # ties round up
    if target > 7200:
        return 7200
    if target < 720:
        return 720
    return best


def pearson(a, b) -> float:
    a = np.asarray(a, float) - np.mean(a)
    b = np.asarray(b, float) - np.mean(b)
    return float(a @ b / math.sqrt((a @ a) * (b @ b)))
