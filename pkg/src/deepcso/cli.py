"""deepcso: multi-station water level forecasting for combined sewer overflow structures."""

from __future__ import annotations

import argparse
import sys
from collections.abc import Callable
from dataclasses import replace
from datetime import datetime
from pathlib import Path
from typing import Any

import numpy as np

from deepcso import __version__
from deepcso.cells import CELL_KINDS
from deepcso.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from deepcso.config import (
    NO_BASELINE,
    PARSERS,
    RunConfig,
    build_run_config,
    key_of,
    resolve_config_path,
)
from deepcso.data import (
    LagSpec,
    ScalerParams,
    TimeSeriesFrame,
    WindowedDataset,
    chrono_split,
    export_csv,
    fill_gaps,
    fit_scaler,
    format_timestamp,
    load_csv,
    make_windows,
    parse_timestamp,
    scale,
    select_lags,
    train_rows,
    unscale,
    window_at,
    write_text_atomic,
)
from deepcso.errors import ConfigError, DeepCSOError, HistoryError, InvalidStateError
from deepcso.metrics import MetricsReport, evaluate, evaluate_predictions, report_table, report_to_json
from deepcso.model import build_model, fit, forward, predict
from deepcso.numerics import SeededRng, derive_seed
from deepcso.optim import OPTIMIZER_KINDS
from deepcso.synth import BASELINE_KINDS, baseline_fit, baseline_predict, generate, summarize
from deepcso.tuner import (
    BATCH_SIZES,
    DROPOUTS,
    HIDDEN_SIZES,
    OPTIMIZERS,
    SearchSpace,
    TrialResult,
    append_trial_log,
    coordinate_search,
    read_trial_log,
)

DEFAULT_MODEL_OUT = "deepcso-model.json"
DEFAULT_BEST_OUT = "best.conf"
CHOICES = {"cell": CELL_KINDS, "optimizer": OPTIMIZER_KINDS, "baseline": (NO_BASELINE, *BASELINE_KINDS)}
OPTION_HELP = {
    "data": "Telemetry CSV (timestamp column plus one column per channel).",
    "out": "Output path (CSV for synth, checkpoint for train, report for evaluate, best config for search).",
    "seed": "Seed for initialization, shuffling, dropout and the synthetic generator.",
    "horizon": "Forecast horizon(s) in steps, comma separated; train writes one checkpoint per horizon.",
    "train-fraction": "Chronological share of the data used for training (default: 0.8).",
    "val-fraction": "Share of the training samples held out for early stopping (default: 0.1).",
    "max-gap": "Longest run of missing values filled forward before windowing (default: 3).",
    "baseline": "Single-task baseline evaluated side by side with the model.",
}


def load_frame(config: RunConfig) -> TimeSeriesFrame:
    if not config.data:
        raise ConfigError("no data file given; pass --data or set data= in the config file")
    return fill_gaps(load_csv(config.data), config.max_gap)


def prepare(config: RunConfig, frame: TimeSeriesFrame) -> tuple[TimeSeriesFrame, ScalerParams, LagSpec]:
    """Select lags and fit the scaler on the training rows; return the scaled frame."""
    rows = train_rows(len(frame), config.train_fraction)
    lag_spec = select_lags(frame, rows, config.lag_policy())
    scaler = fit_scaler(frame, rows)
    return scale(frame, scaler), scaler, lag_spec


def split_windows(
    config: RunConfig, scaled: TimeSeriesFrame, lag_spec: LagSpec, horizon: int
) -> tuple[WindowedDataset, WindowedDataset, WindowedDataset]:
    """``(fit, validation, test)``: the chronological training share, its tail held out, the rest."""
    dataset = make_windows(scaled, lag_spec, horizon)
    train, test = chrono_split(dataset, config.train_fraction)
    fit_part, val = chrono_split(train, 1.0 - config.val_fraction)
    return fit_part, val, test


def checkpoint_path(out: str, horizon: int, several: bool) -> Path:
    """``out`` itself for a single horizon, else ``<stem>.h<k><suffix>`` per horizon."""
    path = Path(out)
    return path.with_name(f"{path.stem}.h{horizon}{path.suffix}") if several else path


def forecast_at(checkpoint: Checkpoint, frame: TimeSeriesFrame, at: datetime | None = None) -> dict[str, float]:
    """Forecast every station ``horizon`` steps after ``at`` (default: the last row), in physical units."""
    model, scaler, lag_spec, targets = _deployable(checkpoint)
    frame.require(scaler.channel_ids)
    scaled = scale(frame.select(scaler.channel_ids), scaler)
    row = len(frame) - 1 if at is None else frame.row_of(at)
    if row is None:
        raise HistoryError(
            f"{format_timestamp(at)} is not a row of the data "  # type: ignore[arg-type]
            f"({format_timestamp(frame.start)} to {format_timestamp(frame.timestamp(len(frame) - 1))})"
        )
    pred, _ = forward(model, window_at(scaled, lag_spec, row))
    values = unscale(pred, scaler, targets)
    return {station: float(v) for station, v in zip(targets, values)}


def clamp_forecast(forecast: dict[str, float], scaler: ScalerParams) -> dict[str, float]:
    """Clip to ``[0, channel max seen in training]`` for presentation."""
    _, hi = scaler.bounds(list(forecast))
    return {station: min(max(v, 0.0), float(top)) for (station, v), top in zip(forecast.items(), hi)}


def _deployable(checkpoint: Checkpoint) -> tuple[Any, ScalerParams, LagSpec, tuple[str, ...]]:
    if checkpoint.scaler is None or checkpoint.lag_spec is None or checkpoint.targets is None:
        raise InvalidStateError("checkpoint carries no scaler, lag spec or targets; it cannot read raw data")
    return checkpoint.model, checkpoint.scaler, checkpoint.lag_spec, checkpoint.targets


def _plot_rows(frame: TimeSeriesFrame, dataset: WindowedDataset, obs: np.ndarray, sim: np.ndarray) -> str:
    header = ["timestamp"]
    for station in dataset.target_channels:
        header += [f"{station}_obs", f"{station}_sim"]
    lines = [",".join(header)]
    for i, end in enumerate(dataset.indices):
        cells = [format_timestamp(frame.timestamp(int(end) + dataset.horizon))]
        for j in range(len(dataset.target_channels)):
            cells += [repr(float(obs[i, j])), repr(float(sim[i, j]))]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def cmd_synth(args: argparse.Namespace, config: RunConfig) -> int:
    out = config.out or "catchment.csv"
    frame = generate(config.catchment_config())
    export_csv(frame, out)
    print(f"deepcso: wrote {out} ({len(frame)} rows, {len(frame.level_ids)} stations, {len(frame.rain_ids)} rain)")
    print(f"  {'station':<10}{'max':>9}{'mean':>9}{'std':>9}")
    for station, top, mean, std in summarize(frame):
        print(f"  {station:<10}{top:>9.3f}{mean:>9.3f}{std:>9.3f}")
    return 0


def cmd_lags(args: argparse.Namespace, config: RunConfig) -> int:
    frame = load_frame(config)
    lag_spec = select_lags(frame, train_rows(len(frame), config.train_fraction), config.lag_policy())
    for channel in frame.channel_ids:
        lags = lag_spec.lags.get(channel, ())
        print(f"  {channel}: {', '.join(str(lag) for lag in lags) if lags else '(none)'}")
    print(f"deepcso: lookback {lag_spec.lookback} over {len(lag_spec.input_channels)} input channels")
    return 0


def cmd_train(args: argparse.Namespace, config: RunConfig) -> int:
    out = config.out or DEFAULT_MODEL_OUT
    scaled, scaler, lag_spec = prepare(config, load_frame(config))
    several = len(config.horizon) > 1
    for horizon in config.horizon:
        fit_part, val, _ = split_windows(config, scaled, lag_spec, horizon)
        model = build_model(
            config.model_config(
                input_channels=len(lag_spec.input_channels),
                num_stations=len(fit_part.target_channels),
                lookback=lag_spec.lookback,
                horizon=horizon,
            )
        )

        def on_epoch(epoch: int, train_loss: float, val_loss: float, horizon: int = horizon) -> None:
            print(f"  horizon {horizon} epoch {epoch}: train {train_loss:.6f} validation {val_loss:.6f}")

        report = fit(
            model,
            fit_part,
            val,
            config.optimizer_spec(),
            epochs=config.epochs,
            batch_size=config.batch_size,
            patience=config.patience,
            rng=SeededRng(derive_seed(config.seed, horizon)),
            on_epoch=on_epoch,
        )
        path = checkpoint_path(out, horizon, several)
        save_checkpoint(model, path, scaler=scaler, lag_spec=lag_spec, targets=fit_part.target_channels)
        print(
            f"deepcso: horizon {horizon}: {report.stop_reason} after {report.epochs_run} epochs, "
            f"final validation loss {report.best_val_loss:.6f} (epoch {report.best_epoch})"
        )
        print(f"deepcso: wrote {path}")
    return 0


def cmd_evaluate(args: argparse.Namespace, config: RunConfig) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    model, scaler, lag_spec, targets = _deployable(checkpoint)
    frame = load_frame(config)
    frame.require(scaler.channel_ids)
    frame = frame.select(scaler.channel_ids)
    dataset = make_windows(scale(frame, scaler), lag_spec, model.config.horizon, targets)
    train, test = chrono_split(dataset, config.train_fraction)
    part = test if args.split == "test" else dataset

    report = evaluate(model, part, scaler)
    reports: list[MetricsReport] = [report]
    spec = config.baseline_spec()
    if spec is not None:
        baseline = baseline_fit(train, spec, lag_spec)
        obs = unscale(part.targets, scaler, targets)
        sim = unscale(baseline_predict(baseline, part), scaler, targets)
        reports.append(evaluate_predictions(obs, sim, targets, part.horizon, spec.kind))

    for r in reports:
        print(report_table(r))
    if config.out:
        out = Path(config.out)
        write_text_atomic(out, report_to_json(report))
        print(f"deepcso: wrote {out}")
        for r in reports[1:]:
            side = out.with_name(f"{out.stem}.{r.model}{out.suffix}")
            write_text_atomic(side, report_to_json(r))
            print(f"deepcso: wrote {side}")
    if args.export:
        obs = unscale(part.targets, scaler, targets)
        sim = unscale(predict(model, part.inputs), scaler, targets)
        write_text_atomic(args.export, _plot_rows(frame, part, obs, sim))
        print(f"deepcso: wrote {args.export}")
    return 0


def cmd_forecast(args: argparse.Namespace, config: RunConfig) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    _, scaler, _, _ = _deployable(checkpoint)
    frame = load_frame(config)
    at = args.at if args.at is not None else frame.timestamp(len(frame) - 1)
    forecast = clamp_forecast(forecast_at(checkpoint, frame, at), scaler)
    horizon = checkpoint.model.config.horizon
    valid = frame.timestamp(frame.row_of(at) + horizon)  # type: ignore[operator]
    print(f"deepcso: forecast issued at {format_timestamp(at)} for {format_timestamp(valid)} (horizon {horizon})")
    for station, value in forecast.items():
        print(f"  {station} {value:.4f}")
    return 0


def cmd_search(args: argparse.Namespace, config: RunConfig) -> int:
    if len(config.horizon) != 1:
        raise ConfigError(f"search takes a single horizon, got {','.join(map(str, config.horizon))}")
    out = Path(config.out or DEFAULT_BEST_OUT)
    log_path = Path(args.trial_log) if args.trial_log else out.with_name(f"{out.name}.trials.jsonl")
    scaled, scaler, lag_spec = prepare(config, load_frame(config))
    horizon = config.horizon[0]
    fit_part, val, test = split_windows(config, scaled, lag_spec, horizon)
    base = config.model_config(
        input_channels=len(lag_spec.input_channels),
        num_stations=len(fit_part.target_channels),
        lookback=lag_spec.lookback,
        horizon=horizon,
    )
    space = SearchSpace(
        hidden_size=args.axis_hidden or HIDDEN_SIZES,
        batch_size=args.axis_batch_size or BATCH_SIZES,
        optimizer=args.axis_optimizer or OPTIMIZERS,
        dropout=args.axis_dropout or DROPOUTS,
        model=base,
        optimizer_spec=config.optimizer_spec(),
        base_batch_size=config.batch_size,
        epochs=config.epochs,
        patience=config.patience,
    )

    def on_trial(trial: TrialResult) -> None:
        append_trial_log(log_path, [trial])
        value = trial.point[trial.axis]
        outcome = f"validation {trial.val_loss:.6f}" if trial.ok else f"failed ({trial.error})"
        print(f"  pass {trial.pass_index + 1} {trial.axis}={value}: {outcome}")

    best, trials = coordinate_search(
        space,
        fit_part,
        val,
        passes=config.passes,
        until_stable=args.until_stable,
        workers=config.workers,
        test=test,
        scaler=scaler,
        on_trial=on_trial,
    )
    best_config = replace(
        config,
        out=None,
        hidden=best["hidden_size"],
        batch_size=best["batch_size"],
        optimizer=best["optimizer"],
        dropout=best["dropout"],
        learning_rate=config.learning_rate if best["optimizer"] == config.optimizer else None,
    )
    write_text_atomic(out, best_config.to_text())

    logged = read_trial_log(log_path)[-len(trials) :]
    failed = sum(1 for record in logged if record["status"] != "ok")
    print(f"deepcso: {len(logged)} trials ({failed} failed), log {log_path}")
    print("deepcso: best " + " ".join(f"{axis}={value}" for axis, value in best.items()))
    print(f"deepcso: wrote {out}")
    return 0


def _list_of(kind: Callable[[str], Any]) -> Callable[[str], tuple[Any, ...]]:
    def parse(text: str) -> tuple[Any, ...]:
        return tuple(kind(part) for part in text.split(","))

    parse.__name__ = f"{kind.__name__} list"
    return parse


def parse_args(argv: list[str] | None = None) -> argparse.Namespace:
    options = argparse.ArgumentParser(add_help=False)
    options.add_argument(
        "--config",
        default=None,
        help="Config file of key=value lines (default: $DEEPCSO_CONFIG). Flags override its values.",
    )
    for name, parse in PARSERS.items():
        key = key_of(name)
        options.add_argument(
            f"--{key}",
            dest=name,
            type=parse,
            default=None,
            choices=CHOICES.get(name),
            help=OPTION_HELP.get(key),
        )

    parser = argparse.ArgumentParser(
        prog="deepcso", description="Multi-station water level forecasting for combined sewer overflows."
    )
    parser.add_argument("--version", action="version", version=f"deepcso {__version__}")
    commands = parser.add_subparsers(dest="command", required=True, metavar="command")

    synth = commands.add_parser("synth", parents=[options], help="Generate a synthetic catchment CSV.")
    synth.set_defaults(handler=cmd_synth)

    lags = commands.add_parser("lags", parents=[options], help="Show the lags selected from the training rows.")
    lags.set_defaults(handler=cmd_lags)

    train = commands.add_parser("train", parents=[options], help="Train one checkpoint per horizon.")
    train.set_defaults(handler=cmd_train)

    evaluate_cmd = commands.add_parser("evaluate", parents=[options], help="Score a checkpoint per station.")
    evaluate_cmd.add_argument("--checkpoint", required=True, help="Checkpoint written by train.")
    evaluate_cmd.add_argument(
        "--split",
        choices=("test", "all"),
        default="test",
        help="Score the chronological test tail (default) or every window.",
    )
    evaluate_cmd.add_argument("--export", default=None, help="Write forecast-vs-observed plot data to this CSV.")
    evaluate_cmd.set_defaults(handler=cmd_evaluate)

    forecast = commands.add_parser("forecast", parents=[options], help="Forecast every station from one instant.")
    forecast.add_argument("--checkpoint", required=True, help="Checkpoint written by train.")
    forecast.add_argument(
        "--at", type=parse_timestamp, default=None, help="Issue time, e.g. 2014-09-30T12:00:00Z (default: last row)."
    )
    forecast.set_defaults(handler=cmd_forecast)

    search = commands.add_parser("search", parents=[options], help="One-axis-at-a-time hyperparameter search.")
    search.add_argument("--axis-hidden", type=_list_of(int), default=None, help="Hidden size candidates.")
    search.add_argument("--axis-batch-size", type=_list_of(int), default=None, help="Batch size candidates.")
    search.add_argument("--axis-optimizer", type=_list_of(str), default=None, help="Optimizer candidates.")
    search.add_argument("--axis-dropout", type=_list_of(float), default=None, help="Dropout ratio candidates.")
    search.add_argument(
        "--until-stable", action="store_true", help="Repeat passes (up to --passes) until one changes nothing."
    )
    search.add_argument("--trial-log", default=None, help="Trial log path (default: <out>.trials.jsonl).")
    search.set_defaults(handler=cmd_search)
    return parser.parse_args(argv)


def run_config(args: argparse.Namespace) -> RunConfig:
    overrides = {name: getattr(args, name) for name in PARSERS if getattr(args, name, None) is not None}
    return build_run_config(resolve_config_path(args.config), overrides)


def _origin(exc: BaseException) -> str:
    """Short name of the innermost deepcso module in the traceback."""
    name = "cli"
    tb = exc.__traceback__
    while tb is not None:
        module = tb.tb_frame.f_globals.get("__name__", "")
        if module.startswith("deepcso."):
            name = module.rsplit(".", 1)[-1]
        tb = tb.tb_next
    return name


def _describe_os_error(exc: OSError) -> str:
    if exc.filename is not None and exc.strerror:
        return f"{exc.strerror}: {exc.filename}"
    return str(exc)


def main(argv: list[str] | None = None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2
    try:
        return args.handler(args, run_config(args))
    except ConfigError as e:
        # bad run options are usage errors
        print(f"deepcso: {_origin(e)} {e.kind}: {e}", file=sys.stderr)
        return 2
    except DeepCSOError as e:
        print(f"deepcso: {_origin(e)} {e.kind}: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"deepcso: {_origin(e)} I/O error: {_describe_os_error(e)}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main(sys.argv[1:]))

