"""Run configuration: defaults, then a ``key=value`` config file, then command-line flags.

Config file keys mirror the flag names without the leading ``--``::

    # deepcso run
    data=catchment.csv
    horizon=1,3,6
    cell=gru
    hidden=64
"""

from __future__ import annotations

import math
import os
from collections.abc import Callable, Mapping
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any

from deepcso.cells import CELL_KINDS
from deepcso.data import LagPolicy
from deepcso.errors import ConfigError
from deepcso.model import ModelConfig
from deepcso.optim import DEFAULT_LEARNING_RATES, OPTIMIZER_KINDS, OptimizerSpec
from deepcso.synth import BASELINE_KINDS, BaselineSpec, CatchmentConfig

CONFIG_ENV_VAR = "DEEPCSO_CONFIG"
NO_BASELINE = "none"


def parse_horizons(text: str) -> tuple[int, ...]:
    try:
        horizons = tuple(int(part) for part in text.split(","))
    except ValueError:
        raise ValueError(f"expected comma-separated integers, got {text!r}") from None
    if any(k < 1 for k in horizons):
        raise ValueError(f"horizons must be >= 1, got {text!r}")
    return horizons


def parse_optional_float(text: str) -> float | None:
    return None if text.strip().lower() == "none" else float(text)


def parse_seed(text: str) -> int:
    seed = int(text)
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {text}")
    return seed


@dataclass(frozen=True)
class RunConfig:
    data: str | None = None
    out: str | None = None
    seed: int = 0
    horizon: tuple[int, ...] = (1,)
    cell: str = "gru"
    epochs: int = 200
    batch_size: int = 1024
    hidden: int = 512
    layers: int = 2
    dropout: float = 0.2
    optimizer: str = "adam"
    learning_rate: float | None = None
    clip_norm: float | None = None
    patience: int = 10
    train_fraction: float = 0.8
    val_fraction: float = 0.1
    max_gap: int = 3
    acf_threshold: float = math.exp(-1.0)
    lookback_cap: int = 24
    rain_top_m: int = 3
    baseline: str = NO_BASELINE
    baseline_lags: int = 6
    ridge: float = 0.0
    steps: int = CatchmentConfig.steps
    stations: int = CatchmentConfig.num_stations
    storm_rate: float = CatchmentConfig.storm_rate
    storm_intensity: float = CatchmentConfig.storm_intensity
    noise: float = CatchmentConfig.noise
    workers: int = 1
    passes: int = 1

    def __post_init__(self) -> None:
        if self.cell not in CELL_KINDS:
            raise ConfigError(f"cell: unknown kind {self.cell!r}; expected one of {', '.join(CELL_KINDS)}")
        if self.optimizer not in OPTIMIZER_KINDS:
            kinds = ", ".join(OPTIMIZER_KINDS)
            raise ConfigError(f"optimizer: unknown kind {self.optimizer!r}; expected one of {kinds}")
        if self.baseline not in (NO_BASELINE, *BASELINE_KINDS):
            raise ConfigError(f"baseline: unknown kind {self.baseline!r}")
        if not self.horizon or any(k < 1 for k in self.horizon):
            raise ConfigError(f"horizon: need one or more horizons >= 1, got {self.horizon}")
        for name in ("train_fraction", "val_fraction"):
            value = getattr(self, name)
            if not 0 < value < 1:
                raise ConfigError(f"{key_of(name)} must lie in (0, 1), got {value}")
        for name in ("epochs", "max_gap"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{key_of(name)} must be >= 0, got {getattr(self, name)}")
        for name in ("batch_size", "hidden", "layers", "patience", "workers", "passes", "baseline_lags", "stations"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{key_of(name)} must be >= 1, got {getattr(self, name)}")

    def model_config(self, *, input_channels: int, num_stations: int, lookback: int, horizon: int) -> ModelConfig:
        return ModelConfig(
            cell_kind=self.cell,
            hidden_size=self.hidden,
            num_recurrent_layers=self.layers,
            num_stations=num_stations,
            lookback=lookback,
            horizon=horizon,
            dropout_ratio=self.dropout,
            input_channels=input_channels,
            seed=self.seed,
        )

    def optimizer_spec(self) -> OptimizerSpec:
        rate = self.learning_rate if self.learning_rate is not None else DEFAULT_LEARNING_RATES[self.optimizer]
        return OptimizerSpec(kind=self.optimizer, learning_rate=rate, clip_norm=self.clip_norm)

    def lag_policy(self) -> LagPolicy:
        return LagPolicy(acf_threshold=self.acf_threshold, lookback_cap=self.lookback_cap, rain_top_m=self.rain_top_m)

    def baseline_spec(self) -> BaselineSpec | None:
        if self.baseline == NO_BASELINE:
            return None
        return BaselineSpec(kind=self.baseline, lag_order=self.baseline_lags, ridge=self.ridge)

    def catchment_config(self) -> CatchmentConfig:
        return CatchmentConfig.with_stations(
            self.stations,
            steps=self.steps,
            storm_rate=self.storm_rate,
            storm_intensity=self.storm_intensity,
            noise=self.noise,
            seed=self.seed,
        )

    def to_text(self) -> str:
        """Config file text that loads back to this config."""
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name in ("data", "out") and value is None:
                continue
            lines.append(f"{key_of(f.name)}={_render(value)}")
        return "\n".join(lines) + "\n"


def key_of(field_name: str) -> str:
    return field_name.replace("_", "-")


def _render(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


PARSERS: dict[str, Callable[[str], Any]] = {
    "data": str,
    "out": str,
    "seed": parse_seed,
    "horizon": parse_horizons,
    "cell": str,
    "epochs": int,
    "batch_size": int,
    "hidden": int,
    "layers": int,
    "dropout": float,
    "optimizer": str,
    "learning_rate": parse_optional_float,
    "clip_norm": parse_optional_float,
    "patience": int,
    "train_fraction": float,
    "val_fraction": float,
    "max_gap": int,
    "acf_threshold": float,
    "lookback_cap": int,
    "rain_top_m": int,
    "baseline": str,
    "baseline_lags": int,
    "ridge": float,
    "steps": int,
    "stations": int,
    "storm_rate": float,
    "storm_intensity": float,
    "noise": float,
    "workers": int,
    "passes": int,
}
KEYS: tuple[str, ...] = tuple(key_of(name) for name in PARSERS)


def parse_config_text(text: str, source: str = "<config>") -> dict[str, Any]:
    """Parse ``key=value`` lines; blank lines and ``#`` comments are ignored."""
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        name = key.replace("-", "_")
        try:
            values[name] = PARSERS[name](value)
        except ValueError as e:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {e}") from None
    return values


def load_config_file(path: Path | str) -> dict[str, Any]:
    path = Path(path)
    return parse_config_text(path.read_text(encoding="utf-8"), str(path))


def resolve_config_path(flag: str | None, environ: Mapping[str, str] | None = None) -> Path | None:
    """``--config`` wins over ``$DEEPCSO_CONFIG``; neither means no file."""
    if flag:
        return Path(flag)
    env = (os.environ if environ is None else environ).get(CONFIG_ENV_VAR)
    return Path(env) if env else None


def build_run_config(path: Path | None, overrides: Mapping[str, Any]) -> RunConfig:
    """Defaults, then the file at ``path`` (if any), then ``overrides`` (already-parsed flag values)."""
    config = RunConfig()
    if path is not None:
        config = replace(config, **load_config_file(path))
    unknown = sorted(set(overrides) - set(PARSERS))
    if unknown:
        raise ConfigError(f"unknown option {key_of(unknown[0])!r}")
    return replace(config, **overrides)
