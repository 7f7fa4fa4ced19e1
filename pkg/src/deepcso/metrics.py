"""Evaluation metrics (correlation coefficient, RMSE, Nash-Sutcliffe efficiency) and per-station reports.

Metrics are computed in physical units: forecasts and targets are unscaled first.
"""

from __future__ import annotations

import json
import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from deepcso.data import ScalerParams, WindowedDataset, unscale
from deepcso.errors import DegenerateDataError, DeepCSOError, ShapeError
from deepcso.model import Model, predict
from deepcso.numerics import pearson


def _pair(obs: Sequence[float] | np.ndarray, sim: Sequence[float] | np.ndarray, min_len: int) -> tuple[np.ndarray, ...]:
    obs = np.asarray(obs, dtype=np.float64)
    sim = np.asarray(sim, dtype=np.float64)
    if obs.ndim != 1 or obs.shape != sim.shape:
        raise ShapeError(f"obs and sim must be 1-d series of equal length, got {obs.shape} and {sim.shape}")
    if len(obs) < min_len:
        raise ShapeError(f"need at least {min_len} values, got {len(obs)}")
    return obs, sim


def cc(obs: Sequence[float] | np.ndarray, sim: Sequence[float] | np.ndarray) -> float:
    """Pearson correlation between observed and simulated series."""
    obs, sim = _pair(obs, sim, 2)
    r = pearson(sim, obs)
    if r is None:
        raise DegenerateDataError("cc is undefined: a series has zero variance")
    return r


def rmse(obs: Sequence[float] | np.ndarray, sim: Sequence[float] | np.ndarray) -> float:
    obs, sim = _pair(obs, sim, 1)
    diff = obs - sim
    return math.sqrt(float(np.dot(diff, diff)) / len(obs))


def nse(obs: Sequence[float] | np.ndarray, sim: Sequence[float] | np.ndarray) -> float:
    """``1 - sum((obs - sim)^2) / sum((obs - mean(obs))^2)``."""
    obs, sim = _pair(obs, sim, 2)
    dev = obs - obs.mean()
    denominator = float(np.dot(dev, dev))
    if denominator == 0.0:
        raise DegenerateDataError("nse is undefined: observations are constant")
    diff = obs - sim
    return 1.0 - float(np.dot(diff, diff)) / denominator


@dataclass(frozen=True)
class StationMetrics:
    cc: float | None
    rmse: float | None
    nse: float | None
    error: str | None = None


@dataclass(frozen=True)
class MetricsReport:
    horizon: int
    model: str
    n: int
    stations: dict[str, StationMetrics] = field(default_factory=dict)

    def mean(self, metric: str) -> float:
        values = [getattr(m, metric) for m in self.stations.values() if m.error is None]
        return float(np.mean(values)) if values else math.nan


def evaluate_predictions(
    obs: np.ndarray,
    sim: np.ndarray,
    station_ids: Sequence[str],
    horizon: int,
    label: str,
) -> MetricsReport:
    """One metric triple per station from ``(samples, stations)`` arrays in physical units.

    A degenerate station records its error and leaves the others unaffected.
    """
    if obs.shape != sim.shape or obs.ndim != 2 or obs.shape[1] != len(station_ids):
        raise ShapeError(f"obs {obs.shape} / sim {sim.shape} do not match {len(station_ids)} stations")
    stations: dict[str, StationMetrics] = {}
    for j, station in enumerate(station_ids):
        try:
            stations[station] = StationMetrics(
                cc=cc(obs[:, j], sim[:, j]),
                rmse=rmse(obs[:, j], sim[:, j]),
                nse=nse(obs[:, j], sim[:, j]),
            )
        except DeepCSOError as e:
            stations[station] = StationMetrics(None, None, None, error=f"{e.kind}: {e}")
    return MetricsReport(horizon=horizon, model=label, n=len(obs), stations=stations)


def evaluate(model: Model, dataset: WindowedDataset, scaler: ScalerParams, label: str | None = None) -> MetricsReport:
    """Forecast every window, unscale to physical units and score each station."""
    if dataset.horizon != model.config.horizon:
        raise ShapeError(f"dataset horizon {dataset.horizon} differs from model horizon {model.config.horizon}")
    pred = predict(model, dataset.inputs)
    obs = unscale(dataset.targets, scaler, dataset.target_channels)
    sim = unscale(pred, scaler, dataset.target_channels)
    return evaluate_predictions(obs, sim, dataset.target_channels, dataset.horizon, label or model.config.cell_kind)


def report_to_json(report: MetricsReport) -> str:
    """Report document: one object per station with cc/rmse/nse/n/horizon/model."""
    doc: dict[str, dict[str, object]] = {}
    for station, m in report.stations.items():
        entry: dict[str, object] = {"cc": m.cc, "rmse": m.rmse, "nse": m.nse}
        if m.error is not None:
            entry["error"] = m.error
        entry.update(n=report.n, horizon=report.horizon, model=report.model)
        doc[station] = entry
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def report_from_json(text: str) -> MetricsReport:
    doc = json.loads(text)
    if not doc:
        raise ShapeError("report document has no stations")
    first = next(iter(doc.values()))
    stations = {
        station: StationMetrics(entry["cc"], entry["rmse"], entry["nse"], entry.get("error"))
        for station, entry in doc.items()
    }
    return MetricsReport(horizon=first["horizon"], model=first["model"], n=first["n"], stations=stations)


def report_table(report: MetricsReport) -> str:
    """Fixed-width table in the layout of the per-horizon result tables."""
    lines = [
        f"{report.model} horizon {report.horizon} (n={report.n})",
        f"{'station':<12}{'CC':>10}{'RMSE':>10}{'NSE':>10}",
    ]
    for station, m in report.stations.items():
        if m.error is not None:
            lines.append(f"{station:<12}  {m.error}")
        else:
            lines.append(f"{station:<12}{m.cc:>10.4f}{m.rmse:>10.4f}{m.nse:>10.4f}")
    return "\n".join(lines)
