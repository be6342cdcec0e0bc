import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from kenn.kds import (
    BlockStats,
    GraphKDS,
    KnowledgeGraph,
    NaiveLastKDS,
    SeasonalRuleConfig,
    apply_seasonal_rule,
    build_graph,
    delta,
    graph_from_pacf,
    kds_forecast,
)
from kenn.timeseries import Series, make_samples, mse, split_chronological


def _graph(lags, weights, period=48):
    w = tuple(float(v) for v in weights)
    return KnowledgeGraph(tuple(lags), w, w, w, 0.2, period)


# ---------------------------------------------------------------- delta


@pytest.mark.parametrize(
    "lag,expected",
    [(1, 1.0), (48, 1.0), (64, 1 / 12), (96, 1 / (2 * math.log2(96)))],
)
def test_delta_values(lag, expected):
    assert delta(lag) == pytest.approx(expected, abs=1e-12)


def test_delta_96_numeric():
    assert delta(96) == pytest.approx(0.075931, abs=1e-6)


def test_delta_follows_period():
    assert delta(30, period=24) < 1.0
    assert delta(30, period=48) == 1.0


def test_delta_rejects_zero():
    with pytest.raises(ValueError):
        delta(0)


def test_delta_non_increasing_past_period():
    vals = [delta(k) for k in range(49, 2000)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


# ---------------------------------------------------------------- graph construction


def test_graph_from_pacf_example():
    g = graph_from_pacf([0.9, 0.25, 0.10, 0.30], 0.2, 48)
    assert g.connected_lags == (1, 2, 4)
    np.testing.assert_allclose(g.norm_weights, [0.9 / 1.45, 0.25 / 1.45, 0.30 / 1.45], rtol=1e-12)
    np.testing.assert_allclose(g.norm_weights, [0.6207, 0.1724, 0.2069], atol=5e-5)
    assert not g.fallback


def test_graph_single_far_lag_gets_unit_weight():
    vals = np.zeros(60)
    vals[48] = 0.5  # lag 49
    g = graph_from_pacf(vals, 0.2, 48)
    assert g.connected_lags == (49,)
    assert g.raw_weights[0] == pytest.approx(0.5 / (2 * math.log2(49)))
    assert g.norm_weights == (1.0,)


def test_graph_signed_threshold_excludes_negative():
    g = graph_from_pacf([0.5, -0.6, 0.3], 0.2, 48)
    assert g.connected_lags == (1, 3)
    g_abs = graph_from_pacf([0.5, -0.6, 0.3], 0.2, 48, abs_threshold=True)
    assert g_abs.connected_lags == (1, 2, 3)
    assert all(w > 0 for w in g_abs.raw_weights)


def test_graph_fallback_when_nothing_passes():
    g = graph_from_pacf(np.full(50, 0.05), 0.2, 48)
    assert g.fallback
    assert g.connected_lags == (1, 48)
    assert g.norm_weights == (0.5, 0.5)


def test_graph_on_seasonal_series_links_lag_1_and_period(seasonal):
    train, _ = split_chronological(seasonal, 0.8)
    g = build_graph(train)
    assert 1 in g.connected_lags and 48 in g.connected_lags


@given(arrays(np.float64, st.integers(1, 100), elements=st.floats(-1, 1)))
def test_graph_invariants(values):
    g = graph_from_pacf(values, 0.2, 48)
    assert abs(sum(g.norm_weights) - 1.0) <= 1e-12
    assert all(w > 0 for w in g.raw_weights)
    if not g.fallback:
        assert all(values[k - 1] > 0.2 for k in g.connected_lags)


def test_graph_csv_round_trip(seasonal):
    g = build_graph(split_chronological(seasonal, 0.8)[0])
    back = KnowledgeGraph.from_csv(g.to_csv())
    assert back.connected_lags == g.connected_lags
    assert back.norm_weights == g.norm_weights
    assert back.raw_weights == g.raw_weights
    assert g.to_csv().splitlines()[0] == "lag,pacf,delta,raw_weight,norm_weight"


# ---------------------------------------------------------------- forecasting


def test_forecast_weighted_sum():
    assert kds_forecast(_graph((1, 2), (0.6, 0.4)), [0, 10, 20], 1)[0] == pytest.approx(16.0)


def test_forecast_single_lag_is_naive():
    np.testing.assert_array_equal(kds_forecast(_graph((1,), (1.0,)), [3.0, 7.0], 1), [7.0])


def test_forecast_recursive():
    np.testing.assert_array_equal(kds_forecast(_graph((1,), (1.0,)), [1.0, 5.0], 2), [5.0, 5.0])


def test_forecast_recursion_feeds_back():
    # y3 = .5*y2 + .5*y1 then y4 uses y3
    out = kds_forecast(_graph((1, 2), (0.5, 0.5)), [0.0, 4.0], 2)
    np.testing.assert_allclose(out, [2.0, 3.0])


def test_forecast_short_history():
    with pytest.raises(ValueError):
        kds_forecast(_graph((1, 3), (0.5, 0.5)), [1.0, 2.0], 1)


def test_forecast_constant_history():
    g = graph_from_pacf([0.9, 0.25, 0.10, 0.30])
    np.testing.assert_allclose(kds_forecast(g, np.full(10, 7.5), 3), 7.5, rtol=1e-14)


weights_st = st.lists(st.floats(0.01, 1.0), min_size=1, max_size=6)


@given(weights_st, arrays(np.float64, 6, elements=st.floats(-1e3, 1e3)), st.floats(-1e3, 1e3))
def test_forecast_convex_and_shift_covariant(raw, hist, c):
    lags = tuple(range(1, len(raw) + 1))
    w = np.array(raw) / np.sum(raw)
    g = _graph(lags, w)
    f = kds_forecast(g, hist, 1)[0]
    ref = hist[-len(raw):]
    tol = 1e-9 * max(1.0, np.abs(hist).max())
    assert ref.min() - tol <= f <= ref.max() + tol
    assert kds_forecast(g, hist + c, 1)[0] == pytest.approx(f + c, abs=1e-9 * (1 + abs(c) + np.abs(hist).max()))


# ---------------------------------------------------------------- seasonal rule


def _stats(sigma, period=48, block=4):
    return BlockStats(block, period, np.full(period // block, float(sigma)))


def _history(block_mean):
    # day 0 only; block 0 of the previous day is indices 0..3
    h = np.zeros(48)
    h[:4] = block_mean
    return h


@pytest.mark.parametrize("sigma,expected", [(4.0, 12.0), (2.0, 10.0), (0.0, 10.0)])
def test_rule_examples(sigma, expected):
    out, ok = apply_seasonal_rule([10.0], _history(12.0), SeasonalRuleConfig(), _stats(sigma), 48)
    assert ok
    assert out[0] == expected


def test_rule_zero_sigma_fires_on_exact_match():
    out, _ = apply_seasonal_rule([12.0], _history(12.0), SeasonalRuleConfig(), _stats(0.0), 48)
    assert out[0] == 12.0


def test_rule_blend():
    cfg = SeasonalRuleConfig(blend=0.5)
    out, _ = apply_seasonal_rule([10.0], _history(12.0), cfg, _stats(4.0), 48)
    assert out[0] == 11.0


def test_rule_skipped_without_previous_day():
    out, ok = apply_seasonal_rule([10.0], np.zeros(20), SeasonalRuleConfig(), _stats(4.0), 20)
    assert not ok
    assert out[0] == 10.0


def test_rule_disabled():
    out, ok = apply_seasonal_rule([10.0], _history(12.0), SeasonalRuleConfig(enabled=False), _stats(4.0), 48)
    assert ok and out[0] == 10.0


@pytest.mark.parametrize("kw", [{"k_sigma": 0}, {"block_hours": 0}, {"sigma_mode": "x"}, {"blend": 2}])
def test_rule_config_validation(kw):
    with pytest.raises(ValueError):
        SeasonalRuleConfig(**kw)


@given(
    arrays(np.float64, 3, elements=st.floats(-50, 50)),
    arrays(np.float64, 96, elements=st.floats(-50, 50)),
    st.floats(0, 30),
    st.integers(96, 400),
)
def test_rule_idempotent(pred, hist, sigma, origin):
    cfg, stats = SeasonalRuleConfig(), _stats(sigma)
    once, _ = apply_seasonal_rule(pred, hist, cfg, stats, origin)
    twice, _ = apply_seasonal_rule(once, hist, cfg, stats, origin)
    np.testing.assert_array_equal(once, twice)


def test_block_stats_per_block_and_global(seasonal):
    train = split_chronological(seasonal, 0.8)[0]
    per = BlockStats.from_train(train, SeasonalRuleConfig())
    glob = BlockStats.from_train(train, SeasonalRuleConfig(sigma_mode="global"))
    assert per.sigma.shape == (12,) and per.block_len == 4
    assert np.all(glob.sigma == np.std(train.values))
    # block sigma is a spread of daily means, smaller than the raw spread
    assert np.all(per.sigma < glob.sigma)


# ---------------------------------------------------------------- GraphKDS


def test_naive_graph_walk_forward():
    kds = GraphKDS(rule=SeasonalRuleConfig(enabled=False))
    kds.graph_ = _graph((1,), (1.0,))
    kds.rule_ = kds.rule
    kds.period_ = 48
    s = Series([1.0, 2, 3, 4, 5])
    np.testing.assert_array_equal(kds.predict_series(s, 1, 1).ravel(), [2, 3, 4])


def test_predictions_align_with_samples(seasonal):
    train, _ = split_chronological(seasonal, 0.8)
    kds = GraphKDS().fit(train)
    first = kds.first_valid_sample(48)
    preds = kds.predict_series(seasonal, 48, 2, first)
    assert preds.shape == (len(make_samples(seasonal, 48, 2)) - first, 2)


def test_predictions_ignore_the_future(seasonal):
    train, _ = split_chronological(seasonal, 0.8)
    kds = GraphKDS().fit(train)
    first = kds.first_valid_sample(48)
    a = kds.predict_series(seasonal, 48, 1, first)
    vals = seasonal.values.copy()
    vals[-10:] += 1000.0
    b = kds.predict_series(Series(vals, seasonal.period), 48, 1, first)
    # every forecast whose history ends before the first changed value,
    # including the forecast of that value itself, is unaffected
    np.testing.assert_array_equal(a[:-9], b[:-9])
    assert not np.array_equal(a[-9:], b[-9:])


def test_graph_kds_beats_naive_on_seasonal_data(seasonal):
    train, test = split_chronological(seasonal, 0.8)
    graph = GraphKDS().fit(train)
    naive = NaiveLastKDS().fit(train)
    first = graph.first_valid_sample(48)
    truth = make_samples(test, 48, 1).targets[first:]
    g_mse = mse(graph.predict_series(test, 48, 1, first), truth)
    n_mse = mse(naive.predict_series(test, 48, 1, first), truth)
    assert g_mse < n_mse


def test_unfitted_kds_raises():
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        GraphKDS().forecast(np.zeros(100))
