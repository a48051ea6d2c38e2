"""Automatic seasonal ARIMA with period 24, fitted by conditional sum of squares.

The search is exhaustive over p, q in {0, 1, 2}, P, Q in {0, 1} and
d, D in {0, 1}. Each candidate is estimated by minimising the conditional
sum of squared innovations, with AR and MA polynomials parametrised through
partial autocorrelations so every estimate is causal and invertible. The
candidate with the lowest ``n * log(SSE / n) + 2k`` wins.
"""

from __future__ import annotations

import itertools
import logging
import warnings
from dataclasses import dataclass, field
from datetime import date

import numpy as np
from scipy.optimize import least_squares
from scipy.signal import lfilter

from ..data_model import ForecastSet

log = logging.getLogger(__name__)

SEASON = 24
MIN_HISTORY = 3 * 168
P_RANGE = (0, 1, 2)
Q_RANGE = (0, 1, 2)
SP_RANGE = (0, 1)
SQ_RANGE = (0, 1)
D_RANGE = (0, 1)
MIN_ROOT_MODULUS = 1.01


@dataclass(frozen=True)
class ArimaSpec:
    order: tuple  # (p, d, q)
    seasonal_order: tuple  # (P, D, Q)
    ar: tuple = ()
    ma: tuple = ()
    sar: tuple = ()
    sma: tuple = ()
    intercept: float = 0.0
    sigma2: float = float("nan")
    aic: float = float("nan")
    n_obs: int = 0
    period: int = SEASON
    fallback: bool = False
    candidates: tuple = field(default=(), repr=False, compare=False)  # ((order, seasonal, aic), ...)

    def __post_init__(self):
        p, d, q = self.order
        P, D, Q = self.seasonal_order
        if p not in P_RANGE or q not in Q_RANGE or P not in SP_RANGE or Q not in SQ_RANGE \
                or d not in D_RANGE or D not in D_RANGE:
            raise ValueError(f"orders {self.order}{self.seasonal_order} outside the search box")
        if (len(self.ar), len(self.ma), len(self.sar), len(self.sma)) != (p, q, P, Q):
            raise ValueError("coefficient counts do not match the orders")

    @property
    def has_intercept(self) -> bool:
        return self.order[1] == 0 and self.seasonal_order[1] == 0

    @property
    def label(self) -> str:
        return f"ARIMA{self.order}{self.seasonal_order}[{self.period}]"

    def ar_operator(self) -> np.ndarray:
        """Coefficients c of the full autoregressive operator sum_j c_j B^j, differencing included."""
        poly = _ar_poly(np.array(self.ar), np.array(self.sar), self.period)
        for _ in range(self.order[1]):
            poly = np.convolve(poly, [1.0, -1.0])
        for _ in range(self.seasonal_order[1]):
            seas = np.zeros(self.period + 1)
            seas[0], seas[-1] = 1.0, -1.0
            poly = np.convolve(poly, seas)
        return poly

    def ma_operator(self) -> np.ndarray:
        return _ma_poly(np.array(self.ma), np.array(self.sma), self.period)


def seasonal_random_walk() -> ArimaSpec:
    """The (0,0,0)(0,1,0)[24] model, i.e. the seasonal naive forecaster."""
    return ArimaSpec((0, 0, 0), (0, 1, 0))


def _ar_poly(ar: np.ndarray, sar: np.ndarray, s: int) -> np.ndarray:
    nonseas = np.concatenate([[1.0], -ar])
    seas = np.zeros(s * len(sar) + 1)
    seas[0] = 1.0
    for k, c in enumerate(sar, start=1):
        seas[s * k] = -c
    return np.convolve(nonseas, seas)


def _ma_poly(ma: np.ndarray, sma: np.ndarray, s: int) -> np.ndarray:
    nonseas = np.concatenate([[1.0], ma])
    seas = np.zeros(s * len(sma) + 1)
    seas[0] = 1.0
    for k, c in enumerate(sma, start=1):
        seas[s * k] = c
    return np.convolve(nonseas, seas)


def pacf_to_ar(u: np.ndarray) -> np.ndarray:
    """Map unconstrained reals to a causal AR coefficient vector (Durbin-Levinson)."""
    r = np.tanh(u)
    phi = np.zeros(0)
    for k in range(len(r)):
        phi = np.concatenate([phi - r[k] * phi[::-1], [r[k]]])
    return phi


def difference(y: np.ndarray, d: int, D: int, s: int = SEASON) -> np.ndarray:
    w = np.asarray(y, dtype=np.float64)
    for _ in range(d):
        w = w[1:] - w[:-1]
    for _ in range(D):
        w = w[s:] - w[:-s]
    return w


def _unpack(theta: np.ndarray, p: int, q: int, P: int, Q: int, with_mean: bool):
    k = 0
    ar = pacf_to_ar(theta[k:k + p]); k += p
    ma = -pacf_to_ar(theta[k:k + q]); k += q
    sar = pacf_to_ar(theta[k:k + P]); k += P
    sma = -pacf_to_ar(theta[k:k + Q]); k += Q
    mu = theta[k] if with_mean else 0.0
    return ar, ma, sar, sma, mu


def min_root_modulus(coef: np.ndarray, sign: float) -> float:
    """Smallest root modulus of 1 + sign * sum_j coef_j x^j (inf for an empty polynomial).

    Uses the reciprocal polynomial, which is monic, so tiny coefficients are harmless.
    """
    coef = np.asarray(coef, dtype=np.float64)
    if not len(coef) or not np.any(coef):
        return float("inf")
    lam = np.max(np.abs(np.roots(np.concatenate([[1.0], sign * coef]))))
    with np.errstate(over="ignore", divide="ignore"):
        return float(np.float64(1.0) / lam)


def near_unit_root(ar, ma, sar, sma) -> bool:
    """True when any AR or MA factor has a root within 1% of the unit circle."""
    return min(min_root_modulus(ar, -1.0), min_root_modulus(ma, 1.0),
               min_root_modulus(sar, -1.0), min_root_modulus(sma, 1.0)) < MIN_ROOT_MODULUS


def css_residuals(w: np.ndarray, ar, ma, sar, sma, mu: float, s: int = SEASON) -> np.ndarray:
    """Innovations of the ARMA part given a differenced series, zero pre-sample MA terms.

    The first ``p + s*P`` values are conditioned on and not returned.
    """
    a = _ar_poly(np.asarray(ar), np.asarray(sar), s)
    m = _ma_poly(np.asarray(ma), np.asarray(sma), s)
    n_cond = len(a) - 1
    x = w - mu
    # AR part exactly on observed values, then invert the MA filter
    u = np.convolve(x, a)[n_cond:len(x)]
    return lfilter([1.0], m, u)


def _fit_candidate(w: np.ndarray, p: int, q: int, P: int, Q: int, with_mean: bool,
                   skip: int, s: int = SEASON):
    """Estimate one candidate; ``skip`` leading residuals are left out of the SSE.

    Returns (ar, ma, sar, sma, mu, sse, n) or None if estimation failed.
    """
    n_par = p + q + P + Q + int(with_mean)
    n_cond = p + s * P
    skip = max(skip - n_cond, 0)  # residual k sits at w[k + n_cond]

    def resid(theta):
        return css_residuals(w, *_unpack(theta, p, q, P, Q, with_mean), s)[skip:]

    if len(w) - n_cond - skip <= n_par + 1:
        return None
    if p + q + P + Q == 0:
        mu = float(np.mean(w[skip:])) if with_mean else 0.0
        e = w[skip:] - mu
        return (), (), (), (), mu, float(e @ e), len(e)
    x0 = np.zeros(n_par)
    if with_mean:
        x0[-1] = float(np.mean(w))
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            sol = least_squares(resid, x0, method="trf", x_scale="jac", max_nfev=400)
    except (ValueError, np.linalg.LinAlgError, FloatingPointError):
        return None
    if sol.status < 1 or not np.all(np.isfinite(sol.x)):
        return None
    e = sol.fun
    sse = float(e @ e)
    if not np.isfinite(sse) or sse <= 0:
        return None
    ar, ma, sar, sma, mu = _unpack(sol.x, p, q, P, Q, with_mean)
    if near_unit_root(ar, ma, sar, sma):
        return None
    return tuple(ar), tuple(ma), tuple(sar), tuple(sma), float(mu), sse, len(e)


def candidate_orders():
    for d, D in itertools.product(D_RANGE, D_RANGE):
        for p, q, P, Q in itertools.product(P_RANGE, Q_RANGE, SP_RANGE, SQ_RANGE):
            yield (p, d, q), (P, D, Q)


def fit_arima_auto(y, s: int = SEASON, min_history: int = MIN_HISTORY) -> ArimaSpec:
    """Select and estimate the AIC-best candidate for an already transformed series."""
    y = np.asarray(y, dtype=np.float64)
    if len(y) < min_history:
        raise ValueError(f"auto ARIMA needs at least {min_history} observations, got {len(y)}")
    if not np.all(np.isfinite(y)):
        raise ValueError("series contains non-finite values")
    # every candidate is scored on the same time span, so n is common
    burn = max(D_RANGE) * (1 + s) + max(P_RANGE) + s * max(SP_RANGE)
    best = None
    scores = []
    for (p, d, q), (P, D, Q) in candidate_orders():
        w = difference(y, d, D, s)
        with_mean = d == 0 and D == 0
        fit = _fit_candidate(w, p, q, P, Q, with_mean, burn - d - s * D, s)
        if fit is None:
            continue
        ar, ma, sar, sma, mu, sse, n = fit
        k = p + q + P + Q + int(with_mean)
        aic = n * np.log(sse / n) + 2 * k
        scores.append(((p, d, q), (P, D, Q), float(aic)))
        if best is None or aic < best[0]:
            best = (aic, (p, d, q), (P, D, Q), ar, ma, sar, sma, mu, sse / n, n)
    if best is None:
        log.warning("no ARIMA candidate converged; falling back to seasonal naive")
        return ArimaSpec((0, 0, 0), (0, 1, 0), period=s, fallback=True)
    aic, order, sorder, ar, ma, sar, sma, mu, sigma2, n = best
    return ArimaSpec(order, sorder, ar, ma, sar, sma, mu, sigma2, aic, n, s,
                     candidates=tuple(scores))


def forecast_path(spec: ArimaSpec, y, horizon: int = 24) -> np.ndarray:
    """Iterated forecasts on the transformed scale, future innovations set to zero."""
    y = np.asarray(y, dtype=np.float64)
    A = spec.ar_operator()
    M = spec.ma_operator()
    mu = spec.intercept if spec.has_intercept else 0.0
    x = y - mu if mu else y.copy()
    if len(x) < len(A) - 1:
        raise ValueError(f"need at least {len(A) - 1} observations to forecast {spec.label}")
    if len(M) > 1:
        # innovations over the history; pre-sample values taken as zero
        u = np.convolve(x, A)[:len(x)]
        e = lfilter([1.0], M, u)
    else:
        e = np.zeros(0)
    na, nm = len(A) - 1, len(M) - 1
    ext = np.concatenate([x, np.zeros(horizon)])
    T = len(x)
    for h in range(horizon):
        t = T + h
        acc = 0.0
        for j in range(1, na + 1):
            if A[j] != 0.0:
                acc -= A[j] * ext[t - j]
        for j in range(h + 1, nm + 1):
            if M[j] != 0.0:
                acc += M[j] * e[t - j]
        ext[t] = acc
    out = ext[T:]
    if not np.all(np.isfinite(out)):
        raise FloatingPointError(f"non-finite forecast from {spec.label}")
    return out + mu if mu else out


def copy_lag(spec: ArimaSpec) -> int | None:
    """The lag L when the spec forecasts z_t = z_{t-L} exactly (random walks), else None."""
    A = spec.ar_operator()
    lags = np.flatnonzero(A[1:]) + 1
    if (len(lags) == 1 and A[lags[0]] == -1.0 and len(spec.ma_operator()) == 1
            and not (spec.has_intercept and spec.intercept)):
        return int(lags[0])
    return None


def arima_forecast(spec: ArimaSpec, history, origin_day: date, meter_id: str = "",
                   horizon: int = 24) -> ForecastSet:
    """24-hour kWh forecast from a spec fitted on log1p of this meter's history.

    Pure copy models (plain or seasonal random walk) repeat observations, so
    they are evaluated on the kWh values themselves and reproduce them exactly
    instead of through expm1(log1p(z)).
    """
    z = np.asarray(history, dtype=np.float64)
    lag = copy_lag(spec)
    if lag is not None:
        if len(z) < lag:
            raise ValueError(f"need at least {lag} observations to forecast {spec.label}")
        ext = np.concatenate([z, np.empty(horizon)])
        for h in range(horizon):
            ext[len(z) + h] = ext[len(z) + h - lag]
        values = ext[len(z):]
    else:
        values = np.expm1(forecast_path(spec, np.log1p(z), horizon))
    return ForecastSet("arima", meter_id, origin_day, np.maximum(values, 0.0))


def fit_meter(history_kwh, s: int = SEASON, max_history: int | None = None) -> ArimaSpec:
    """Fit on log1p of (the most recent ``max_history`` hours of) a kWh history."""
    z = np.asarray(history_kwh, dtype=np.float64)
    if max_history is not None and len(z) > max_history:
        z = z[-max_history:]
    return fit_arima_auto(np.log1p(z), s)
