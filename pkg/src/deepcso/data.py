"""Telemetry ingestion and preparation: CSV frames, gap filling, scaling, lag selection, windowing.

CSV schema: header ``timestamp,<channel_id>,...``; ``rain_``-prefixed channels are rain gauges,
everything else is a water level. Timestamps are ISO-8601 UTC (``2014-03-19T00:00:00Z``) on a fixed
grid; an empty field is a missing value.
"""

from __future__ import annotations

import csv
import errno
import math
import os
import tempfile
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from deepcso.errors import (
    DegenerateDataError,
    EmptyDatasetError,
    EmptyLagSpecError,
    HistoryError,
    IngestionError,
    InvalidArgumentError,
    SchemaError,
    ShapeError,
    SplitError,
)
from deepcso.numerics import pearson

DEFAULT_STEP = 600
TIMESTAMP_FORMAT = "%Y-%m-%dT%H:%M:%SZ"
RAIN_PREFIX = "rain_"


@dataclass(frozen=True)
class Channel:
    id: str
    kind: str


def channel_kind(channel_id: str) -> str:
    return "rain" if channel_id.startswith(RAIN_PREFIX) else "level"


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime(TIMESTAMP_FORMAT)


def parse_timestamp(text: str) -> datetime:
    return datetime.strptime(text, TIMESTAMP_FORMAT).replace(tzinfo=timezone.utc)


@dataclass(frozen=True, eq=False)
class TimeSeriesFrame:
    """Channels on a fixed time grid; ``values`` is ``(rows, channels)`` with NaN marking missing."""

    start: datetime
    step: int
    channels: tuple[Channel, ...]
    values: np.ndarray
    scaled: bool = False

    def __post_init__(self) -> None:
        if self.step <= 0:
            raise InvalidArgumentError(f"step must be positive, got {self.step}")
        if self.values.ndim != 2 or self.values.shape[1] != len(self.channels):
            raise ShapeError(f"values have shape {self.values.shape} for {len(self.channels)} channels")
        ids = [c.id for c in self.channels]
        if len(set(ids)) != len(ids):
            raise InvalidArgumentError(f"duplicate channel ids in {ids}")
        if not self.scaled:
            for j, ch in enumerate(self.channels):
                col = self.values[:, j]
                if ch.kind == "level" and np.any(col[~np.isnan(col)] < 0):
                    raise InvalidArgumentError(f"level channel {ch.id} has negative values")

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def channel_ids(self) -> tuple[str, ...]:
        return tuple(c.id for c in self.channels)

    @property
    def level_ids(self) -> tuple[str, ...]:
        return tuple(c.id for c in self.channels if c.kind == "level")

    @property
    def rain_ids(self) -> tuple[str, ...]:
        return tuple(c.id for c in self.channels if c.kind == "rain")

    def index(self, channel_id: str) -> int:
        try:
            return self.channel_ids.index(channel_id)
        except ValueError:
            raise SchemaError(f"no channel {channel_id!r}", missing=(channel_id,)) from None

    def column(self, channel_id: str) -> np.ndarray:
        return self.values[:, self.index(channel_id)]

    def timestamp(self, row: int) -> datetime:
        return self.start + timedelta(seconds=self.step * row)

    def row_of(self, ts: datetime) -> int | None:
        offset = (ts - self.start).total_seconds()
        if offset % self.step:
            return None
        row = int(offset // self.step)
        return row if 0 <= row < len(self) else None

    def require(self, channel_ids: Iterable[str]) -> None:
        missing = tuple(c for c in channel_ids if c not in self.channel_ids)
        if missing:
            raise SchemaError(f"data is missing channels: {', '.join(missing)}", missing=missing)

    def select(self, channel_ids: Sequence[str]) -> TimeSeriesFrame:
        """Frame restricted to ``channel_ids``, in that order."""
        self.require(channel_ids)
        cols = [self.index(c) for c in channel_ids]
        return replace(self, channels=tuple(self.channels[j] for j in cols), values=self.values[:, cols].copy())

    def equals(self, other: TimeSeriesFrame) -> bool:
        return (
            self.start == other.start
            and self.step == other.step
            and self.channels == other.channels
            and self.scaled == other.scaled
            and np.array_equal(self.values, other.values, equal_nan=True)
        )


def load_csv(path: Path | str, expected_step: int = DEFAULT_STEP) -> TimeSeriesFrame:
    """Read a telemetry CSV; grid holes become missing rows."""
    path = Path(path)
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    while rows and not rows[-1]:
        rows.pop()  # blank lines at the end of the file
    if not rows:
        raise IngestionError("file is empty", row=1)
    header = rows[0]
    if len(header) < 2 or header[0] != "timestamp" or any(not h or h != h.strip() for h in header[1:]):
        raise IngestionError(f"malformed header {header!r}; expected 'timestamp,<channel_id>,...'", row=1)
    if len(set(header[1:])) != len(header) - 1:
        raise IngestionError("duplicate channel ids in header", row=1)
    channels = tuple(Channel(h, channel_kind(h)) for h in header[1:])
    if len(rows) < 2:
        raise IngestionError("no data rows", row=2)

    times: list[datetime] = []
    records: list[list[float]] = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise IngestionError(f"expected {len(header)} fields, got {len(row)}", row=lineno)
        try:
            ts = parse_timestamp(row[0])
        except ValueError:
            raise IngestionError(f"bad timestamp {row[0]!r}", row=lineno) from None
        if times:
            delta = (ts - times[-1]).total_seconds()
            if delta <= 0:
                raise IngestionError(f"timestamp {row[0]} does not increase", row=lineno)
            if delta % expected_step:
                raise IngestionError(f"timestamp {row[0]} is off the {expected_step} s grid", row=lineno)
        values: list[float] = []
        for ch, text in zip(channels, row[1:]):
            if text == "":
                values.append(math.nan)
                continue
            try:
                value = float(text)
            except ValueError:
                raise IngestionError(f"channel {ch.id}: cannot parse {text!r}", row=lineno) from None
            if not math.isfinite(value):
                raise IngestionError(f"channel {ch.id}: non-finite value {text!r}", row=lineno)
            if ch.kind == "level" and value < 0:
                raise IngestionError(f"channel {ch.id}: negative level {text}", row=lineno)
            values.append(value)
        times.append(ts)
        records.append(values)

    start = times[0]
    n_rows = int((times[-1] - start).total_seconds() // expected_step) + 1
    grid = np.full((n_rows, len(channels)), np.nan)
    for ts, values in zip(times, records):
        grid[int((ts - start).total_seconds() // expected_step)] = values
    return TimeSeriesFrame(start, expected_step, channels, grid)


def _render(value: float) -> str:
    return "" if math.isnan(value) else repr(float(value))


def render_csv(frame: TimeSeriesFrame) -> str:
    lines = [",".join(["timestamp", *frame.channel_ids])]
    for i, row in enumerate(frame.values):
        lines.append(",".join([format_timestamp(frame.timestamp(i)), *(_render(v) for v in row)]))
    return "\n".join(lines) + "\n"


def write_text_atomic(path: Path | str, text: str) -> None:
    """Write through a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    if not path.parent.is_dir():
        raise FileNotFoundError(errno.ENOENT, "no such directory", str(path.parent))
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def export_csv(frame: TimeSeriesFrame, path: Path | str) -> None:
    """Write ``frame`` in the schema ``load_csv`` reads; decimals are shortest round-trip."""
    write_text_atomic(path, render_csv(frame))


def fill_gaps(frame: TimeSeriesFrame, max_gap: int) -> TimeSeriesFrame:
    """Forward-fill runs of at most ``max_gap`` missing values that follow an observation."""
    if max_gap < 0:
        raise InvalidArgumentError(f"max_gap must be >= 0, got {max_gap}")
    values = frame.values.copy()
    n = len(values)
    for j in range(values.shape[1]):
        col = values[:, j]
        i = 0
        while i < n:
            if not np.isnan(col[i]):
                i += 1
                continue
            end = i
            while end < n and np.isnan(col[end]):
                end += 1
            if i > 0 and end - i <= max_gap:
                col[i:end] = col[i - 1]
            i = end
    return replace(frame, values=values)


def train_rows(n_rows: int, fraction: float) -> range:
    """The chronological training rows: the first ``floor(n_rows * fraction)``."""
    if not 0 < fraction < 1:
        raise InvalidArgumentError(f"train fraction must lie in (0, 1), got {fraction}")
    return range(math.floor(n_rows * fraction))


@dataclass(frozen=True)
class ScalerParams:
    channel_ids: tuple[str, ...]
    mins: tuple[float, ...]
    maxs: tuple[float, ...]

    def bounds(self, channel_ids: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
        missing = tuple(c for c in channel_ids if c not in self.channel_ids)
        if missing:
            raise SchemaError(f"scaler has no channels {', '.join(missing)}", missing=missing)
        idx = [self.channel_ids.index(c) for c in channel_ids]
        return np.array([self.mins[i] for i in idx]), np.array([self.maxs[i] for i in idx])


def fit_scaler(frame: TimeSeriesFrame, train_range: range) -> ScalerParams:
    """Per-channel min/max over the training rows only."""
    if len(train_range) == 0:
        raise InvalidArgumentError("scaler needs a nonempty training range")
    rows = frame.values[train_range.start : train_range.stop]
    mins, maxs = [], []
    for j, ch in enumerate(frame.channels):
        col = rows[:, j]
        col = col[~np.isnan(col)]
        if col.size == 0 or col.max() <= col.min():
            raise DegenerateDataError(f"channel {ch.id} is constant on the training range", channel=ch.id)
        mins.append(float(col.min()))
        maxs.append(float(col.max()))
    return ScalerParams(frame.channel_ids, tuple(mins), tuple(maxs))


def scale(frame: TimeSeriesFrame, params: ScalerParams) -> TimeSeriesFrame:
    """Map each channel to ``(x - min) / (max - min)``; values outside the fit range are not clamped."""
    lo, hi = params.bounds(frame.channel_ids)
    return replace(frame, values=(frame.values - lo) / (hi - lo), scaled=True)


def unscale(values: np.ndarray, params: ScalerParams, channel_ids: Sequence[str]) -> np.ndarray:
    """Inverse of ``scale`` for arrays whose last axis follows ``channel_ids``."""
    lo, hi = params.bounds(channel_ids)
    return np.asarray(values) * (hi - lo) + lo


def _lagged_correlations(a: np.ndarray, b: np.ndarray, max_lag: int, what: str) -> np.ndarray:
    if max_lag < 0 or len(a) <= max_lag + 2:
        raise InvalidArgumentError(f"{what} needs more than max_lag + 2 = {max_lag + 2} values, got {len(a)}")
    out = np.empty(max_lag + 1)
    n = len(a)
    for lag in range(max_lag + 1):
        x, y = a[: n - lag], b[lag:]
        present = ~(np.isnan(x) | np.isnan(y))
        r = pearson(x[present], y[present]) if present.sum() >= 2 else None
        if r is None:
            raise DegenerateDataError(f"{what} is undefined at lag {lag}: zero variance")
        out[lag] = r
    return out


def autocorrelation(series: np.ndarray, max_lag: int) -> np.ndarray:
    """Correlation of the series with its ``lag``-shifted copy, for lags ``0..max_lag``."""
    series = np.asarray(series, dtype=np.float64)
    return _lagged_correlations(series, series, max_lag, "autocorrelation")


def cross_correlation(a: np.ndarray, b: np.ndarray, max_lag: int) -> np.ndarray:
    """Correlation of ``a[t]`` with ``b[t + lag]`` (``a`` leading ``b``), for lags ``0..max_lag``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"cross_correlation needs equal lengths, got {a.shape} and {b.shape}")
    return _lagged_correlations(a, b, max_lag, "cross-correlation")


@dataclass(frozen=True)
class LagPolicy:
    acf_threshold: float = math.exp(-1.0)
    lookback_cap: int = 24
    rain_top_m: int = 3
    significance: float = 1.96

    def __post_init__(self) -> None:
        if self.lookback_cap < 0 or self.rain_top_m < 1:
            raise InvalidArgumentError(f"lookback_cap must be >= 0 and rain_top_m >= 1, got {self}")


@dataclass(frozen=True)
class LagSpec:
    """Selected lags (in steps) per input channel; equality is by channel id, not position."""

    lags: dict[str, tuple[int, ...]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for channel, lags in self.lags.items():
            if list(lags) != sorted(set(lags)) or any(lag < 0 for lag in lags):
                raise InvalidArgumentError(f"lags for {channel} must be sorted, unique and >= 0, got {lags}")
        if not any(self.lags.values()):
            raise EmptyLagSpecError("no channel passed lag selection")

    @property
    def input_channels(self) -> tuple[str, ...]:
        return tuple(c for c, lags in self.lags.items() if lags)

    @property
    def lookback(self) -> int:
        return 1 + max(max(lags) for lags in self.lags.values() if lags)


def select_lags(frame: TimeSeriesFrame, train_range: range, policy: LagPolicy | None = None) -> LagSpec:
    """Choose input lags from the training rows.

    Level channels keep lags ``0..L`` where the autocorrelation stays at or above the threshold
    from lag 1 through ``L``. Rain channels keep, per target station, the ``rain_top_m`` lags with
    the largest significant ``|ccf|`` against that station (ties toward the smaller lag).
    """
    policy = policy or LagPolicy()
    if len(train_range) == 0:
        raise InvalidArgumentError("lag selection needs a nonempty training range")
    rows = frame.values[train_range.start : train_range.stop]
    cap = policy.lookback_cap
    bound = policy.significance / math.sqrt(len(rows))
    level_cols = {cid: rows[:, frame.index(cid)] for cid in frame.level_ids}

    lags: dict[str, tuple[int, ...]] = {}
    for ch in frame.channels:
        col = rows[:, frame.index(ch.id)]
        if ch.kind == "level":
            acf = autocorrelation(col, cap)
            last = 0
            for lag in range(1, cap + 1):
                if acf[lag] < policy.acf_threshold:
                    break
                last = lag
            lags[ch.id] = tuple(range(last + 1))
            continue
        chosen: set[int] = set()
        for level in level_cols.values():
            try:
                ccf = cross_correlation(col, level, cap)
            except DegenerateDataError:
                continue
            ranked = sorted((-abs(r), lag) for lag, r in enumerate(ccf) if abs(r) > bound)
            chosen.update(lag for _, lag in ranked[: policy.rain_top_m])
        lags[ch.id] = tuple(sorted(chosen))
    return LagSpec(lags)


@dataclass(frozen=True, eq=False)
class WindowedDataset:
    """Supervised pairs: ``inputs`` is ``(samples, lookback, channels)``, ``targets`` ``(samples, stations)``.

    ``indices`` holds each sample's last input row in the source frame.
    """

    inputs: np.ndarray
    targets: np.ndarray
    horizon: int
    input_channels: tuple[str, ...]
    target_channels: tuple[str, ...]
    indices: np.ndarray

    def __post_init__(self) -> None:
        if not len(self.inputs) == len(self.targets) == len(self.indices):
            raise ShapeError(
                f"dataset has {len(self.inputs)} inputs, {len(self.targets)} targets, {len(self.indices)} indices"
            )

    def __len__(self) -> int:
        return len(self.inputs)

    @property
    def lookback(self) -> int:
        return self.inputs.shape[1]

    def subset(self, selector: slice | np.ndarray) -> WindowedDataset:
        return replace(
            self,
            inputs=self.inputs[selector],
            targets=self.targets[selector],
            indices=self.indices[selector],
        )


def lag_mask(lag_spec: LagSpec) -> np.ndarray:
    """``(lookback, channels)`` booleans marking the window positions of selected lags."""
    channels = lag_spec.input_channels
    lookback = lag_spec.lookback
    keep = np.zeros((lookback, len(channels)), dtype=bool)
    for j, channel in enumerate(channels):
        for lag in lag_spec.lags[channel]:
            keep[lookback - 1 - lag, j] = True
    return keep


def make_windows(
    frame: TimeSeriesFrame,
    lag_spec: LagSpec,
    horizon: int,
    target_channels: Sequence[str] | None = None,
) -> WindowedDataset:
    """One sample per row ``t`` whose window ``[t - lookback + 1, t]`` and target ``t + horizon`` are present.

    Positions in a channel's window whose lag was not selected are zeroed.
    """
    if horizon < 1:
        raise InvalidArgumentError(f"horizon must be >= 1, got {horizon}")
    targets_ids = tuple(target_channels) if target_channels is not None else frame.level_ids
    inputs_ids = lag_spec.input_channels
    frame.require([*inputs_ids, *targets_ids])
    lookback = lag_spec.lookback
    n = len(frame)
    count = n - lookback - horizon + 1
    if count <= 0:
        raise EmptyDatasetError(f"{n} rows cannot hold a {lookback}-step window and a {horizon}-step horizon")

    data = frame.values[:, [frame.index(c) for c in inputs_ids]]
    windows = sliding_window_view(data, lookback, axis=0)[:count].transpose(0, 2, 1)
    ends = np.arange(lookback - 1, lookback - 1 + count)
    targets = frame.values[ends + horizon][:, [frame.index(c) for c in targets_ids]]

    ok = ~np.isnan(windows).any(axis=(1, 2)) & ~np.isnan(targets).any(axis=1)
    if not ok.any():
        raise EmptyDatasetError("no window is free of missing data")

    inputs = np.where(lag_mask(lag_spec), windows[ok], 0.0)
    return WindowedDataset(
        inputs=np.ascontiguousarray(inputs),
        targets=targets[ok].copy(),
        horizon=horizon,
        input_channels=inputs_ids,
        target_channels=targets_ids,
        indices=ends[ok],
    )


def window_at(frame: TimeSeriesFrame, lag_spec: LagSpec, row: int) -> np.ndarray:
    """The model input window ending at ``row``, masked like ``make_windows``."""
    lookback = lag_spec.lookback
    first = row - lookback + 1
    if first < 0 or row >= len(frame):
        raise HistoryError(
            f"a {lookback}-step window ending at {format_timestamp(frame.timestamp(row))} needs data from "
            f"{format_timestamp(frame.timestamp(first))}; data starts at {format_timestamp(frame.start)}"
        )
    frame.require(lag_spec.input_channels)
    cols = [frame.index(c) for c in lag_spec.input_channels]
    window = frame.values[first : row + 1][:, cols]
    if np.isnan(window).any():
        raise HistoryError(f"the {lookback}-step window ending at {format_timestamp(frame.timestamp(row))} has gaps")
    return np.where(lag_mask(lag_spec), window, 0.0)


def chrono_split(dataset: WindowedDataset, train_fraction: float) -> tuple[WindowedDataset, WindowedDataset]:
    """First ``floor(n * fraction)`` samples train, the rest test."""
    if not 0 < train_fraction < 1:
        raise InvalidArgumentError(f"train fraction must lie in (0, 1), got {train_fraction}")
    n = len(dataset)
    cut = math.floor(n * train_fraction)
    if cut == 0 or cut == n:
        raise SplitError(f"splitting {n} samples at {train_fraction} leaves one side empty")
    return dataset.subset(slice(0, cut)), dataset.subset(slice(cut, n))
