"""Correlation, RMSE and Nash-Sutcliffe efficiency, and per-station reports."""

from __future__ import annotations

import math

import numpy as np
import pytest

from deepcso.data import ScalerParams, WindowedDataset
from deepcso.errors import DegenerateDataError, ShapeError
from deepcso.metrics import (
    MetricsReport,
    StationMetrics,
    cc,
    evaluate,
    evaluate_predictions,
    nse,
    report_from_json,
    report_table,
    report_to_json,
    rmse,
)
from deepcso.model import ModelConfig, build_model
from deepcso.numerics import SeededRng


def two_pass_pearson(a: list[float], b: list[float]) -> float:
    n = len(a)
    ma, mb = sum(a) / n, sum(b) / n
    cov = sum((x - ma) * (y - mb) for x, y in zip(a, b))
    va = sum((x - ma) ** 2 for x in a)
    vb = sum((y - mb) ** 2 for y in b)
    return cov / math.sqrt(va * vb)


class TestCc:
    def test_self_correlation(self):
        assert cc([0.1, 0.5, 0.2, 0.9], [0.1, 0.5, 0.2, 0.9]) == pytest.approx(1.0, abs=1e-15)

    def test_exact_negative_relation(self):
        assert cc([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0, abs=1e-15)

    def test_against_an_independent_computation(self):
        obs, sim = [1.0, 2.0, 3.0, 4.0], [1.0, 2.0, 4.0, 3.0]
        assert cc(obs, sim) == pytest.approx(two_pass_pearson(obs, sim), abs=1e-14)
        assert cc(obs, sim) == pytest.approx(0.8, abs=1e-14)

    def test_bounded_for_random_series(self):
        rng = SeededRng(31)
        for _ in range(20):
            assert -1.0 <= cc(rng.uniform(0, 1, (30,)), rng.uniform(0, 1, (30,))) <= 1.0

    def test_constant_side_is_degenerate(self):
        with pytest.raises(DegenerateDataError, match="zero variance"):
            cc([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])


class TestRmse:
    def test_identical_series(self):
        assert rmse([0.3, 0.4], [0.3, 0.4]) == 0.0

    def test_hand_arithmetic(self):
        assert rmse([1, 2, 3], [1, 2, 4]) == pytest.approx(math.sqrt(1 / 3), abs=1e-15)

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            rmse([1, 2, 3], [1, 2])

    def test_scales_with_the_data(self):
        rng = SeededRng(32)
        obs, sim = rng.uniform(0, 1, (40,)), rng.uniform(0, 1, (40,))
        assert rmse(3 * obs, 3 * sim) == pytest.approx(3 * rmse(obs, sim), abs=1e-14)


class TestNse:
    def test_perfect_fit(self):
        assert nse([0.2, 0.4, 0.1], [0.2, 0.4, 0.1]) == 1.0

    def test_mean_predictor_scores_zero(self):
        obs = np.array([0.2, 0.4, 0.1, 0.9])
        assert nse(obs, np.full(4, obs.mean())) == pytest.approx(0.0, abs=1e-15)

    def test_hand_arithmetic(self):
        assert nse([1, 2, 3], [1, 2, 4]) == pytest.approx(0.5, abs=1e-15)

    def test_never_above_one(self):
        rng = SeededRng(33)
        for _ in range(20):
            assert nse(rng.uniform(0, 1, (25,)), rng.uniform(0, 1, (25,))) <= 1.0

    def test_constant_observations(self):
        with pytest.raises(DegenerateDataError, match="constant"):
            nse([0.5, 0.5], [0.1, 0.9])


class TestReports:
    def _scaler(self) -> ScalerParams:
        return ScalerParams(("cso_1", "cso_2"), (0.0, 1.0), (2.0, 3.0))

    def test_perfect_predictions(self):
        obs = np.array([[0.1, 1.0], [0.5, 2.0], [0.3, 1.5]])
        report = evaluate_predictions(obs, obs.copy(), ("cso_1", "cso_2"), 3, "gru")
        for m in report.stations.values():
            assert (m.cc, m.rmse, m.nse) == (pytest.approx(1.0), 0.0, 1.0)
        assert report.n == 3
        assert report.horizon == 3

    def test_degenerate_station_does_not_affect_the_others(self):
        obs = np.array([[0.1, 1.0], [0.5, 1.0], [0.3, 1.0]])
        sim = np.array([[0.2, 1.1], [0.4, 0.9], [0.3, 1.0]])
        report = evaluate_predictions(obs, sim, ("cso_1", "cso_2"), 1, "lstm")
        assert report.stations["cso_1"].error is None
        assert report.stations["cso_2"].error.startswith("degenerate data:")
        assert report.stations["cso_2"].nse is None
        assert report.mean("rmse") == report.stations["cso_1"].rmse

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            evaluate_predictions(np.zeros((3, 2)), np.zeros((3, 1)), ("cso_1", "cso_2"), 1, "gru")

    def test_model_predicting_the_targets(self):
        config = ModelConfig(
            cell_kind="rnn",
            hidden_size=2,
            num_recurrent_layers=1,
            num_stations=2,
            lookback=2,
            dropout_ratio=0.0,
            input_channels=1,
        )
        model = build_model(config)
        model.restore({k: np.zeros_like(v) for k, v in model.parameters().items()})
        # first input weight carries x_t into h, the head maps it to both stations
        model.layers[0]["W"][0, 0] = 1.0
        model.W_out[:, 0] = 1.0
        inputs = SeededRng(34).uniform(0, 0.5, (6, 2, 1))
        targets = np.tanh(inputs[:, -1, :]).repeat(2, axis=1)
        dataset = WindowedDataset(inputs, targets, 1, ("cso_1",), ("cso_1", "cso_2"), np.arange(6))
        report = evaluate(model, dataset, self._scaler())
        for m in report.stations.values():
            assert m.rmse == pytest.approx(0.0, abs=1e-12)
            assert m.nse == pytest.approx(1.0, abs=1e-12)
            assert m.cc == pytest.approx(1.0, abs=1e-12)
        assert report.model == "rnn"

    def test_json_round_trip(self):
        report = MetricsReport(
            horizon=6,
            model="gru",
            n=120,
            stations={
                "cso_1": StationMetrics(0.91, 0.05, 0.8),
                "cso_2": StationMetrics(None, None, None, error="degenerate data: constant"),
            },
        )
        text = report_to_json(report)
        assert report_from_json(text) == report
        assert '"horizon": 6' in text

    def test_table_layout(self):
        report = MetricsReport(horizon=1, model="lstm", n=10, stations={"cso_1": StationMetrics(0.9, 0.1234, 0.75)})
        assert report_table(report).splitlines() == [
            "lstm horizon 1 (n=10)",
            "station             CC      RMSE       NSE",
            "cso_1           0.9000    0.1234    0.7500",
        ]
