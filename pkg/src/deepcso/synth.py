"""Synthetic catchment generator and the single-task linear baselines.

The generator is a cascade of linear reservoirs with routing delays driven by one stochastic rain
gauge; it stands in for real CSO telemetry when checking the forecasting pipeline end to end.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from deepcso.data import Channel, LagSpec, TimeSeriesFrame, WindowedDataset
from deepcso.errors import ConfigError, EmptyDatasetError, InvalidArgumentError, SingularSystemError
from deepcso.numerics import SeededRng

DEFAULT_START = datetime(2014, 3, 19, tzinfo=timezone.utc)
OUTPUT_DECIMALS = 4

# Headwater stations (1, 3, 6) fill from the rain gauge; the others drain fast and fill mostly from
# upstream, each gain sized so the downstream weir just overtops when its upstream one does.
DEFAULT_RECESSION = (0.5, 0.2, 0.5, 0.2, 0.2, 0.5, 0.2, 0.2)
DEFAULT_RAIN_GAIN = (0.6, 0.05, 0.5, 0.05, 0.05, 0.5, 0.03, 0.03)
DEFAULT_HMAX = (1.66, 1.14, 1.14, 1.77, 3.3, 1.15, 0.75, 0.9)
DEFAULT_ROUTING = (
    (0, 1, 3, 0.6),
    (2, 3, 2, 1.35),
    (1, 4, 4, 2.5),
    (5, 6, 2, 0.6),
    (6, 7, 3, 1.05),
)


@dataclass(frozen=True)
class CatchmentConfig:
    """Generator parameters; ``routing`` holds ``(upstream, downstream, delay, gain)`` station index tuples."""

    num_stations: int = 8
    steps: int = 27756
    step_seconds: int = 600
    storm_rate: float = 0.02
    storm_intensity: float = 1.2
    storm_continue: float = 0.92
    recession: tuple[float, ...] = DEFAULT_RECESSION
    rain_gain: tuple[float, ...] = DEFAULT_RAIN_GAIN
    hmax: tuple[float, ...] = DEFAULT_HMAX
    routing: tuple[tuple[int, int, int, float], ...] = DEFAULT_ROUTING
    noise: float = 0.002
    seed: int = 2014
    start: datetime = field(default=DEFAULT_START)

    def __post_init__(self) -> None:
        n = self.num_stations
        if n < 1 or self.steps < 2 or self.step_seconds < 1:
            raise ConfigError(f"need num_stations >= 1, steps >= 2, step_seconds >= 1; got {n}, {self.steps}")
        for name in ("recession", "rain_gain", "hmax"):
            if len(getattr(self, name)) != n:
                raise ConfigError(f"{name} needs {n} entries, got {len(getattr(self, name))}")
        if any(not 0 < a < 1 for a in self.recession):
            raise ConfigError(f"recession coefficients must lie in (0, 1), got {self.recession}")
        if any(h <= 0 for h in self.hmax):
            raise ConfigError(f"hmax must be positive, got {self.hmax}")
        if not 0 <= self.storm_rate <= 1 or not 0 <= self.storm_continue < 1:
            raise ConfigError("storm_rate must lie in [0, 1] and storm_continue in [0, 1)")
        if self.storm_intensity < 0 or self.noise < 0:
            raise ConfigError("storm_intensity and noise must be >= 0")
        for up, down, delay, _ in self.routing:
            if not (0 <= up < n and 0 <= down < n) or up == down:
                raise ConfigError(f"routing pair {up}->{down} is not a pair of distinct stations")
            if delay < 1:
                raise ConfigError(f"routing delay must be >= 1, got {delay} for {up}->{down}")
        _check_acyclic(n, self.routing)

    @classmethod
    def with_stations(cls, num_stations: int, **overrides: object) -> CatchmentConfig:
        """Config for any station count, cycling the default per-station parameters."""

        def cycle(values: tuple) -> tuple:
            return tuple(values[i % len(values)] for i in range(num_stations))

        routing = tuple(r for r in DEFAULT_ROUTING if r[0] < num_stations and r[1] < num_stations)
        base = {
            "num_stations": num_stations,
            "recession": cycle(DEFAULT_RECESSION),
            "rain_gain": cycle(DEFAULT_RAIN_GAIN),
            "hmax": cycle(DEFAULT_HMAX),
            "routing": routing,
        }
        base.update(overrides)
        return cls(**base)  # type: ignore[arg-type]


def _check_acyclic(n: int, routing: tuple[tuple[int, int, int, float], ...]) -> None:
    downstream: dict[int, list[int]] = {i: [] for i in range(n)}
    for up, down, _, _ in routing:
        downstream[up].append(down)
    done: set[int] = set()

    def visit(node: int, chain: list[int]) -> None:
        for nxt in downstream[node]:
            if nxt in chain or nxt == node:
                loop = [*chain, node][[*chain, node].index(nxt) :] + [nxt]
                raise ConfigError(f"routing graph has a cycle: {' -> '.join(str(s) for s in loop)}")
            if nxt not in done:
                visit(nxt, [*chain, node])
        done.add(node)

    for node in range(n):
        if node not in done:
            visit(node, [])


def station_ids(num_stations: int) -> tuple[str, ...]:
    return tuple(f"cso_{i + 1}" for i in range(num_stations))


def generate_rain(config: CatchmentConfig, rng: SeededRng) -> np.ndarray:
    """Storms start with probability ``storm_rate`` per dry step, continue with probability
    ``storm_continue`` (geometric durations) and rain at an exponentially distributed intensity."""
    draws = rng.random(config.steps)
    rain = np.zeros(config.steps)
    intensity = 0.0
    raining = False
    for t, u in enumerate(draws):
        if raining:
            raining = u < config.storm_continue
        elif u < config.storm_rate:
            raining = True
            intensity = rng.exponential(config.storm_intensity) if config.storm_intensity > 0 else 0.0
        if raining:
            rain[t] = intensity
    return rain


def generate(config: CatchmentConfig | None = None) -> TimeSeriesFrame:
    """Simulate every station's level and the rain gauge; bit-deterministic for a fixed seed.

    ``h_i(t+1) = min(hmax_i, max(0, a_i h_i(t) + b_i r(t-1) + sum_up c h_up(t - d) + noise))``.
    """
    config = config or CatchmentConfig()
    rng = SeededRng(config.seed)
    n, steps = config.num_stations, config.steps
    rain = generate_rain(config, rng)
    noise = rng.normal(config.noise, (steps, n)) if config.noise > 0 else np.zeros((steps, n))

    a = np.array(config.recession)
    b = np.array(config.rain_gain)
    hmax = np.array(config.hmax)
    levels = np.zeros((steps, n))
    for t in range(steps - 1):
        inflow = a * levels[t] + b * (rain[t - 1] if t >= 1 else 0.0) + noise[t + 1]
        for up, down, delay, gain in config.routing:
            if t - delay >= 0:
                inflow[down] += gain * levels[t - delay, up]
        levels[t + 1] = np.minimum(hmax, np.maximum(0.0, inflow))

    values = np.round(np.column_stack([levels, rain]), OUTPUT_DECIMALS)
    # rounding must not push a level over its cap
    values[:, :n] = np.minimum(values[:, :n], hmax)
    channels = tuple(Channel(cid, "level") for cid in station_ids(n)) + (Channel("rain_1", "rain"),)
    return TimeSeriesFrame(config.start, config.step_seconds, channels, values + 0.0)


def summarize(frame: TimeSeriesFrame) -> list[tuple[str, float, float, float]]:
    """``(station, max, mean, std)`` per level channel, ignoring missing values."""
    rows = []
    for cid in frame.level_ids:
        col = frame.column(cid)
        col = col[~np.isnan(col)]
        rows.append((cid, float(col.max()), float(col.mean()), float(col.std())))
    return rows


BASELINE_KINDS: tuple[str, ...] = ("persistence", "linear_ar")


@dataclass(frozen=True)
class BaselineSpec:
    kind: str = "linear_ar"
    lag_order: int = 6
    ridge: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in BASELINE_KINDS:
            raise ConfigError(f"baseline: unknown kind {self.kind!r}; expected one of {', '.join(BASELINE_KINDS)}")
        if self.lag_order < 1:
            raise ConfigError(f"baseline lag order must be >= 1, got {self.lag_order}")
        if self.ridge < 0:
            raise ConfigError(f"ridge penalty must be >= 0, got {self.ridge}")


@dataclass
class StationPredictor:
    """``y = intercept + coef . x`` over the station's own window values at ``positions``."""

    column: int
    positions: tuple[int, ...]
    coef: np.ndarray
    intercept: float


@dataclass
class BaselineModel:
    spec: BaselineSpec
    stations: dict[str, StationPredictor]
    horizon: int


def _own_lags(dataset: WindowedDataset, station: str, spec: BaselineSpec, lag_spec: LagSpec | None) -> tuple[int, ...]:
    lags = tuple(lag for lag in range(min(spec.lag_order, dataset.lookback)))
    if lag_spec is not None:
        # unselected lags are zeroed in the windows
        lags = tuple(lag for lag in lags if lag in lag_spec.lags.get(station, ()))
    if not lags:
        raise InvalidArgumentError(f"station {station} has no own lags to regress on")
    return lags


def baseline_fit(dataset: WindowedDataset, spec: BaselineSpec, lag_spec: LagSpec | None = None) -> BaselineModel:
    """Fit one predictor per station from that station's own lags only.

    ``linear_ar`` solves ridge least squares in closed form on centred data, leaving the intercept
    unpenalized; ``persistence`` repeats the last observed value.
    """
    if len(dataset) == 0:
        raise EmptyDatasetError("baseline needs a nonempty dataset")
    stations: dict[str, StationPredictor] = {}
    last = dataset.lookback - 1
    for j, station in enumerate(dataset.target_channels):
        if station not in dataset.input_channels:
            raise InvalidArgumentError(f"station {station} is not an input channel of the dataset")
        column = dataset.input_channels.index(station)
        if spec.kind == "persistence":
            stations[station] = StationPredictor(column, (last,), np.ones(1), 0.0)
            continue
        positions = tuple(last - lag for lag in _own_lags(dataset, station, spec, lag_spec))
        X = dataset.inputs[:, list(positions), column]
        y = dataset.targets[:, j]
        x_mean, y_mean = X.mean(axis=0), y.mean()
        Xc, yc = X - x_mean, y - y_mean
        gram = Xc.T @ Xc + spec.ridge * np.eye(X.shape[1])
        if np.linalg.matrix_rank(gram) < gram.shape[0]:
            raise SingularSystemError(f"normal equations for {station} are singular; use a ridge penalty > 0")
        coef = np.linalg.solve(gram, Xc.T @ yc)
        stations[station] = StationPredictor(column, positions, coef, float(y_mean - x_mean @ coef))
    return BaselineModel(spec, stations, dataset.horizon)


def baseline_predict(baseline: BaselineModel, dataset: WindowedDataset) -> np.ndarray:
    """Predictions ``(samples, stations)`` in the dataset's (scaled) space."""
    if dataset.horizon != baseline.horizon:
        raise InvalidArgumentError(f"baseline was fit for horizon {baseline.horizon}, dataset has {dataset.horizon}")
    out = np.empty((len(dataset), len(dataset.target_channels)))
    for j, station in enumerate(dataset.target_channels):
        p = baseline.stations[station]
        out[:, j] = p.intercept + dataset.inputs[:, list(p.positions), p.column] @ p.coef
    return out
