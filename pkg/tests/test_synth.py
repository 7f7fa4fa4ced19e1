"""Synthetic catchment generator and the linear baselines."""

from __future__ import annotations

import math

import numpy as np
import pytest

from deepcso.data import Channel, LagSpec, TimeSeriesFrame, autocorrelation, cross_correlation, make_windows, render_csv
from deepcso.errors import ConfigError, EmptyDatasetError, InvalidArgumentError, SingularSystemError
from deepcso.metrics import nse, rmse
from deepcso.synth import (
    DEFAULT_HMAX,
    DEFAULT_RECESSION,
    DEFAULT_ROUTING,
    DEFAULT_START,
    BaselineSpec,
    CatchmentConfig,
    baseline_fit,
    baseline_predict,
    generate,
    station_ids,
    summarize,
)
from tests.factories import small_catchment


def level_frame(*series: np.ndarray) -> TimeSeriesFrame:
    ids = station_ids(len(series))
    return TimeSeriesFrame(DEFAULT_START, 600, tuple(Channel(c, "level") for c in ids), np.column_stack(series))


def own_lag_windows(series: np.ndarray, lags: int, horizon: int = 1):
    return make_windows(level_frame(series), LagSpec({"cso_1": tuple(range(lags))}), horizon)


@pytest.fixture(scope="module")
def default_frame() -> TimeSeriesFrame:
    return generate(CatchmentConfig())


class TestGenerate:
    def test_no_rain_and_no_noise_stays_dry(self):
        frame = generate(CatchmentConfig(steps=500, storm_rate=0.0, noise=0.0))
        assert not np.any(frame.values)
        assert frame.channel_ids == (*station_ids(8), "rain_1")

    def test_same_seed_gives_identical_csv(self):
        assert render_csv(generate(small_catchment())) == render_csv(generate(small_catchment()))

    def test_other_seed_differs(self):
        assert render_csv(generate(small_catchment(seed=3))) != render_csv(generate(small_catchment(seed=4)))

    def test_default_catchment_respects_caps_and_recession(self, default_frame):
        frame = default_frame
        assert len(frame) == 27756
        assert frame.start == DEFAULT_START
        for i, (station, top, _, _) in enumerate(summarize(frame)):
            assert top <= DEFAULT_HMAX[i], station
            assert autocorrelation(frame.column(station), 1)[1] >= DEFAULT_RECESSION[i] - 0.1, station
        assert np.all(frame.values >= 0)

    @pytest.mark.parametrize("route", DEFAULT_ROUTING, ids=lambda r: f"{r[0]}->{r[1]}")
    def test_default_routed_station_peaks_near_its_delay(self, default_frame, route):
        up, down, delay, _ = route
        ids = station_ids(8)
        ccf = cross_correlation(default_frame.column(ids[up]), default_frame.column(ids[down]), 2 * delay)
        assert abs(int(np.argmax(ccf)) - delay) <= 1

    def test_default_levels_fall_in_observed_ranges(self, default_frame):
        for station, top, mean, _ in summarize(default_frame):
            assert 0.75 <= top <= 3.3, station
            assert 0.06 <= mean <= 1.46, station

    def test_routed_station_lags_its_upstream(self):
        config = CatchmentConfig(
            num_stations=2,
            steps=20_000,
            recession=(0.9, 0.1),
            rain_gain=(0.03, 0.0),
            hmax=(50.0, 50.0),
            routing=((0, 1, 3, 0.5),),
            noise=0.0,
            storm_rate=0.01,
            seed=9,
        )
        frame = generate(config)
        ccf = cross_correlation(frame.column("cso_1"), frame.column("cso_2"), 6)
        assert abs(int(np.argmax(ccf)) - 3) <= 1

    def test_values_are_rounded_for_export(self):
        frame = generate(small_catchment())
        np.testing.assert_array_equal(frame.values, np.round(frame.values, 4))

    def test_cyclic_routing(self):
        with pytest.raises(ConfigError, match="routing graph has a cycle: 0 -> 1 -> 0"):
            CatchmentConfig.with_stations(2, routing=((0, 1, 1, 0.1), (1, 0, 1, 0.1)))

    @pytest.mark.parametrize(
        "overrides",
        [
            {"recession": (0.9,) * 7},
            {"hmax": (0.0,) * 8},
            {"routing": ((0, 0, 1, 0.1),)},
            {"routing": ((0, 1, 0, 0.1),)},
            {"storm_rate": 1.5},
            {"steps": 1},
        ],
    )
    def test_invalid_config(self, overrides):
        with pytest.raises(ConfigError):
            CatchmentConfig(**overrides)

    def test_with_stations_cycles_the_defaults(self):
        small = CatchmentConfig.with_stations(3)
        assert small.routing == ((0, 1, 3, 0.6),)
        assert small.recession == DEFAULT_RECESSION[:3]
        large = CatchmentConfig.with_stations(10)
        assert large.hmax[8:] == DEFAULT_HMAX[:2]
        assert len(large.routing) == len(DEFAULT_ROUTING)


class TestBaselines:
    def test_ar1_coefficient_is_recovered(self):
        series = 0.7 ** np.arange(40.0)
        baseline = baseline_fit(own_lag_windows(series, 1), BaselineSpec(kind="linear_ar", lag_order=1))
        predictor = baseline.stations["cso_1"]
        assert predictor.coef[0] == pytest.approx(0.7, abs=1e-8)
        assert predictor.intercept == pytest.approx(0.0, abs=1e-8)

    def test_noiseless_linear_data_is_fit_exactly(self):
        x = [1.0, 2.0]
        for _ in range(60):
            x.append(0.5 * x[-1] + 0.3 * x[-2] + 0.1)
        data = own_lag_windows(np.array(x), 2)
        baseline = baseline_fit(data, BaselineSpec(kind="linear_ar", lag_order=2))
        pred = baseline_predict(baseline, data)
        assert nse(data.targets[:, 0], pred[:, 0]) == pytest.approx(1.0, abs=1e-6)

    def test_persistence_on_a_constant_series(self):
        data = own_lag_windows(np.full(30, 0.4), 3)
        baseline = baseline_fit(data, BaselineSpec(kind="persistence"))
        assert rmse(data.targets[:, 0], baseline_predict(baseline, data)[:, 0]) == 0.0

    def test_persistence_repeats_the_last_value(self):
        series = np.arange(20.0)
        data = own_lag_windows(series, 3, horizon=2)
        pred = baseline_predict(baseline_fit(data, BaselineSpec(kind="persistence")), data)
        np.testing.assert_array_equal(pred[:, 0], data.targets[:, 0] - 2)

    def test_huge_ridge_shrinks_to_the_intercept(self):
        series = np.abs(np.sin(np.arange(80.0) / 5))
        data = own_lag_windows(series, 4)
        baseline = baseline_fit(data, BaselineSpec(kind="linear_ar", lag_order=4, ridge=1e9))
        predictor = baseline.stations["cso_1"]
        assert np.all(np.abs(predictor.coef) < 1e-6)
        np.testing.assert_allclose(baseline_predict(baseline, data)[:, 0], data.targets.mean(), atol=1e-6)

    def test_singular_system_suggests_a_ridge(self):
        data = own_lag_windows(np.full(30, 0.4), 2)
        with pytest.raises(SingularSystemError, match="use a ridge penalty > 0"):
            baseline_fit(data, BaselineSpec(kind="linear_ar", lag_order=2))

    def test_unselected_lags_are_not_regressed_on(self):
        series = np.abs(np.sin(np.arange(80.0) / 5))
        lag_spec = LagSpec({"cso_1": (0, 2)})
        data = make_windows(level_frame(series), lag_spec, 1)
        baseline = baseline_fit(data, BaselineSpec(lag_order=6), lag_spec)
        assert baseline.stations["cso_1"].positions == (2, 0)

    def test_horizon_mismatch(self):
        series = np.abs(np.sin(np.arange(80.0) / 5))
        baseline = baseline_fit(own_lag_windows(series, 2), BaselineSpec(kind="persistence"))
        with pytest.raises(InvalidArgumentError, match="horizon"):
            baseline_predict(baseline, own_lag_windows(series, 2, horizon=3))

    def test_empty_dataset(self):
        data = own_lag_windows(np.arange(10.0), 2)
        with pytest.raises(EmptyDatasetError):
            baseline_fit(data.subset(slice(0, 0)), BaselineSpec())

    def test_target_must_be_an_input(self):
        series = np.abs(np.sin(np.arange(40.0) / 5))
        frame = level_frame(series, series + 1)
        data = make_windows(frame, LagSpec({"cso_1": (0, 1)}), 1)
        with pytest.raises(InvalidArgumentError, match="cso_2 is not an input"):
            baseline_fit(data, BaselineSpec())

    @pytest.mark.parametrize("args", [{"kind": "arima"}, {"lag_order": 0}, {"ridge": -1.0}])
    def test_invalid_spec(self, args):
        with pytest.raises(ConfigError):
            BaselineSpec(**args)


def test_summary_ignores_missing_values():
    frame = level_frame(np.array([0.2, math.nan, 0.4]))
    ((station, top, mean, std),) = summarize(frame)
    assert station == "cso_1"
    assert (top, mean) == (0.4, pytest.approx(0.3))
    assert std == pytest.approx(0.1)
