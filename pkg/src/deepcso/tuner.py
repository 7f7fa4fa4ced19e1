"""One-axis-at-a-time hyperparameter search.

Axes are searched in a fixed order (hidden size, batch size, optimizer, dropout). For each axis one
model is trained per candidate with every other axis at its current best value; the candidate with
the lowest validation loss is adopted before moving on.
"""

from __future__ import annotations

import json
import math
import time
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial
from pathlib import Path
from typing import Any, NamedTuple

from deepcso.data import ScalerParams, WindowedDataset
from deepcso.errors import ConfigError, DeepCSOError, EmptyDatasetError, InvalidStateError, SearchError
from deepcso.metrics import MetricsReport, evaluate, report_to_json
from deepcso.model import Model, ModelConfig, build_model, fit
from deepcso.numerics import SeededRng, derive_seed
from deepcso.optim import OptimizerSpec

AXES: tuple[str, ...] = ("hidden_size", "batch_size", "optimizer", "dropout")

HIDDEN_SIZES = (32, 64, 128, 256, 512, 1024)
BATCH_SIZES = (128, 256, 512, 1024, 2048)
OPTIMIZERS = ("rmsprop", "adadelta", "adagrad", "adam", "adamax", "nadam")
DROPOUTS = (0.5, 0.35, 0.2, 0.0)

Point = dict[str, Any]
Objective = Callable[[Point, int], float]


@dataclass(frozen=True)
class SearchSpace:
    """Candidate lists per axis plus the fixed part of every trial's configuration.

    The base point is read off ``model`` (hidden size, dropout), ``batch_size`` and ``optimizer``.
    """

    hidden_size: tuple[int, ...] = HIDDEN_SIZES
    batch_size: tuple[int, ...] = BATCH_SIZES
    optimizer: tuple[str, ...] = OPTIMIZERS
    dropout: tuple[float, ...] = DROPOUTS
    model: ModelConfig = field(default_factory=ModelConfig)
    optimizer_spec: OptimizerSpec = field(default_factory=OptimizerSpec)
    base_batch_size: int = 1024
    epochs: int = 200
    patience: int = 10

    def __post_init__(self) -> None:
        for axis in AXES:
            if not getattr(self, axis):
                raise ConfigError(f"search axis {axis} has no candidates")
        base = self.base_point()
        for axis in AXES:
            if base[axis] not in getattr(self, axis):
                raise ConfigError(f"base {axis} {base[axis]!r} is not one of the candidates {getattr(self, axis)}")

    def axes(self) -> dict[str, tuple[Any, ...]]:
        return {axis: tuple(getattr(self, axis)) for axis in AXES}

    def base_point(self) -> Point:
        return {
            "hidden_size": self.model.hidden_size,
            "batch_size": self.base_batch_size,
            "optimizer": self.optimizer_spec.kind,
            "dropout": self.model.dropout_ratio,
        }

    def trial_count(self) -> int:
        return sum(len(values) for values in self.axes().values())

    def model_config(self, point: Point, seed: int | None = None) -> ModelConfig:
        return replace(
            self.model,
            hidden_size=point["hidden_size"],
            dropout_ratio=point["dropout"],
            seed=self.model.seed if seed is None else seed,
        )

    def optimizer_for(self, point: Point) -> OptimizerSpec:
        """The base spec when its kind is chosen, else the candidate method with its usual defaults."""
        if point["optimizer"] == self.optimizer_spec.kind:
            return self.optimizer_spec
        return OptimizerSpec.for_kind(point["optimizer"], clip_norm=self.optimizer_spec.clip_norm)


@dataclass(frozen=True)
class TrialResult:
    """Outcome of one trial: a finite validation loss or an error marker, never both."""

    pass_index: int
    axis: str
    candidate_index: int
    point: Point
    seed: int
    val_loss: float | None = None
    error: str | None = None
    test_report: MetricsReport | None = None
    wall_time: float = field(default=0.0, compare=False)

    def __post_init__(self) -> None:
        if (self.val_loss is None) == (self.error is None):
            raise InvalidStateError("a trial carries either a validation loss or an error")

    @property
    def ok(self) -> bool:
        return self.error is None


class SearchOutcome(NamedTuple):
    best: Point
    trials: list[TrialResult]


def _train(
    space: SearchSpace, train: WindowedDataset, val: WindowedDataset, point: Point, seed: int
) -> tuple[Model, float]:
    model = build_model(space.model_config(point, derive_seed(seed, 0)))
    report = fit(
        model,
        train,
        val,
        space.optimizer_for(point),
        epochs=space.epochs,
        batch_size=point["batch_size"],
        patience=space.patience,
        rng=SeededRng(derive_seed(seed, 1)),
    )
    return model, report.best_val_loss


def _run_trial(
    space: SearchSpace,
    objective: Objective | None,
    data: tuple[WindowedDataset | None, WindowedDataset | None, WindowedDataset | None, ScalerParams | None],
    pass_index: int,
    axis: str,
    index: int,
    point: Point,
    seed: int,
) -> TrialResult:
    train, val, test, scaler = data
    started = time.perf_counter()
    trial = partial(TrialResult, pass_index, axis, index, dict(point), seed)
    report = None
    try:
        if objective is not None:
            loss = float(objective(dict(point), seed))
        else:
            assert train is not None and val is not None
            model, loss = _train(space, train, val, point, seed)
            if test is not None and scaler is not None:
                report = evaluate(model, test, scaler)
        if not math.isfinite(loss):
            raise ArithmeticError(f"validation loss is {loss}")
    except (DeepCSOError, ArithmeticError) as e:
        kind = getattr(e, "kind", "arithmetic error")
        return trial(error=f"{kind}: {e}", wall_time=time.perf_counter() - started)
    return trial(val_loss=loss, test_report=report, wall_time=time.perf_counter() - started)


def coordinate_search(
    space: SearchSpace,
    train: WindowedDataset | None = None,
    val: WindowedDataset | None = None,
    *,
    passes: int = 1,
    until_stable: bool = False,
    objective: Objective | None = None,
    workers: int = 1,
    test: WindowedDataset | None = None,
    scaler: ScalerParams | None = None,
    on_trial: Callable[[TrialResult], None] | None = None,
) -> SearchOutcome:
    """Search ``space`` one axis at a time.

    Each trial's seed is derived from the base model seed, the axis position and the candidate
    index, so the trial sequence and the result are independent of ``workers``. Ties go to the
    candidate listed first. With ``until_stable`` the search stops after the first pass (of at most
    ``passes``) that changes nothing.
    """
    if passes < 1 or workers < 1:
        raise ConfigError(f"passes and workers must be >= 1, got {passes} and {workers}")
    if objective is None:
        if train is None or val is None:
            raise ConfigError("a training search needs train and validation datasets")
        if len(train) == 0 or len(val) == 0:
            raise EmptyDatasetError("search datasets must be nonempty")
    data = (train, val, test, scaler)

    best = space.base_point()
    trials: list[TrialResult] = []
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for pass_index in range(passes):
            changed = False
            for axis_index, (axis, candidates) in enumerate(space.axes().items()):
                points = [{**best, axis: value} for value in candidates]
                seeds = [derive_seed(space.model.seed, axis_index, i) for i in range(len(candidates))]
                run = partial(_run_trial, space, objective, data, pass_index, axis)
                results = list(pool.map(run, range(len(candidates)), points, seeds))
                for result in results:
                    trials.append(result)
                    if on_trial is not None:
                        on_trial(result)
                scored = [r for r in results if r.ok]
                if not scored:
                    continue
                winner = min(scored, key=lambda r: (r.val_loss, r.candidate_index))
                if winner.point[axis] != best[axis]:
                    best[axis] = winner.point[axis]
                    changed = True
            if until_stable and not changed:
                break

    if not any(t.ok for t in trials):
        raise SearchError(f"all {len(trials)} trials failed; first error: {trials[0].error}")
    return SearchOutcome(best, trials)


def trial_record(trial: TrialResult) -> dict[str, Any]:
    record: dict[str, Any] = {
        "pass": trial.pass_index,
        "axis": trial.axis,
        "candidate": trial.candidate_index,
        "config": trial.point,
        "seed": trial.seed,
        "status": "ok" if trial.ok else "error",
        "val_loss": trial.val_loss,
    }
    if trial.error is not None:
        record["error"] = trial.error
    if trial.test_report is not None:
        record["test"] = json.loads(report_to_json(trial.test_report))
    return record


def append_trial_log(path: Path | str, trials: Sequence[TrialResult]) -> None:
    """Append one JSON line per trial."""
    with open(path, "a", encoding="utf-8", newline="\n") as f:
        for trial in trials:
            f.write(json.dumps(trial_record(trial), sort_keys=True) + "\n")


def read_trial_log(path: Path | str) -> list[dict[str, Any]]:
    return [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]
