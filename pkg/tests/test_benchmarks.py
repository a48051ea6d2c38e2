from datetime import date

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from meterforecast.benchmarks.arima import (ArimaSpec, arima_forecast, candidate_orders,
                                            css_residuals, fit_arima_auto, fit_meter,
                                            forecast_path, min_root_modulus, pacf_to_ar,
                                            seasonal_random_walk)
from meterforecast.benchmarks.naive import seasonal_naive_forecast

DAY = date(2013, 2, 1)


def test_naive_examples():
    hist = np.r_[np.zeros(10), np.arange(1.0, 25.0)]
    assert seasonal_naive_forecast(hist, DAY).values.tolist() == list(range(1, 25))
    assert np.all(seasonal_naive_forecast(np.full(30, 0.7), DAY).values == 0.7)
    with pytest.raises(ValueError):
        seasonal_naive_forecast(np.ones(23), DAY)


def test_candidate_box():
    orders = list(candidate_orders())
    assert len(orders) == 144 and len(set(orders)) == 144
    with pytest.raises(ValueError):
        ArimaSpec((3, 0, 0), (0, 0, 0), ar=(0.1, 0.1, 0.1))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-6, 6), min_size=1, max_size=2))
def test_pacf_map_is_causal(u):
    phi = pacf_to_ar(np.array(u))
    assert min_root_modulus(phi, -1.0) > 1.0


def test_mean_model_forecast():
    spec = ArimaSpec((0, 0, 0), (0, 0, 0), intercept=np.log1p(0.6))
    fc = arima_forecast(spec, np.random.default_rng(0).uniform(0, 1, 100), DAY)
    assert np.allclose(fc.values, 0.6)


def test_random_walk_repeats_last_value():
    hist = np.random.default_rng(1).uniform(0, 2, 100)
    fc = arima_forecast(ArimaSpec((0, 1, 0), (0, 0, 0)), hist, DAY)
    assert np.all(fc.values == hist[-1])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 20, allow_subnormal=False), min_size=24, max_size=80))
def test_seasonal_random_walk_equals_naive_exactly(hist):
    hist = np.array(hist)
    a = arima_forecast(seasonal_random_walk(), hist, DAY)
    b = seasonal_naive_forecast(hist, DAY)
    assert np.array_equal(a.values, b.values)


def test_css_residuals_of_known_ar1():
    rng = np.random.default_rng(2)
    e = rng.normal(size=500)
    y = np.zeros(500)
    for t in range(1, 500):
        y[t] = 0.5 * y[t - 1] + e[t]
    r = css_residuals(y, [0.5], [], [], [], 0.0)
    assert np.allclose(r, e[1:])


def test_forecast_path_ar1_decays_to_mean():
    spec = ArimaSpec((1, 0, 0), (0, 0, 0), ar=(0.5,), intercept=2.0)
    path = forecast_path(spec, np.array([2.0, 3.0]), 3)
    assert np.allclose(path, [2.5, 2.25, 2.125])


def _sim_ar1(seed, n=2000, phi=0.8):
    rng = np.random.default_rng(seed)
    y = np.zeros(n)
    e = rng.normal(size=n)
    for t in range(1, n):
        y[t] = phi * y[t - 1] + e[t]
    return y + 3.0


def test_selected_aic_is_minimal_and_ar1_beats_naive():
    y = _sim_ar1(0)
    spec = fit_arima_auto(y[:1800])
    assert not spec.fallback
    assert all(spec.aic <= aic + 1e-12 for _, _, aic in spec.candidates)
    assert spec.order[0] >= 1
    one_step = [forecast_path(spec, y[:t], 1)[0] for t in range(1800, 2000)]
    arima_mae = np.mean(np.abs(np.array(one_step) - y[1800:]))
    naive_mae = np.mean(np.abs(y[1776:1976] - y[1800:]))
    assert arima_mae < naive_mae


def test_short_history_is_rejected():
    with pytest.raises(ValueError, match="at least"):
        fit_arima_auto(np.ones(100))


def test_fit_meter_forecasts_are_non_negative():
    rng = np.random.default_rng(4)
    z = np.clip(0.3 + 0.2 * np.sin(np.arange(800) * 2 * np.pi / 24) + 0.05 * rng.normal(size=800), 0, None)
    spec = fit_meter(z, max_history=600)
    assert spec.n_obs <= 600
    fc = arima_forecast(spec, z, DAY)
    assert np.all(fc.values >= 0) and fc.values.shape == (24,)


def test_fit_is_bit_reproducible_across_heap_states():
    y = np.log1p(np.abs(_sim_ar1(7, n=600)))
    seen = set()
    hold = []
    for k in range(4):
        hold.append(np.empty(97 * k + 13))
        s = fit_arima_auto(y)
        seen.add((s.label, s.ar, s.ma, s.sar, s.sma, s.intercept))
    assert len(seen) == 1
