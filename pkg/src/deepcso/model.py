"""The DeepCSO network: stacked recurrent (or dense) hidden layers and one linear output per station.

Forward runs each recurrent layer over the lookback window from a zero state; the top layer's last
hidden vector goes through dropout (training only) and the dense head. Gradients are exact
backpropagation through time over every window step and layer.
"""

from __future__ import annotations

import copy
import time
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from deepcso.cells import (
    CELL_KINDS,
    CellParams,
    StepCache,
    build_cell,
    cell_step,
    cell_step_backward,
    ffnn_step,
    initial_state,
    param_names,
)
from deepcso.errors import ConfigError, EmptyDatasetError, InvalidArgumentError, ShapeError
from deepcso.numerics import SeededRng, init_params
from deepcso.optim import OptimizerSpec, init_optimizer, optimizer_step

if TYPE_CHECKING:
    from deepcso.data import WindowedDataset

FFNN_ACTIVATION = "tanh"
EVAL_CHUNK = 4096


@dataclass(frozen=True)
class ModelConfig:
    cell_kind: str = "gru"
    hidden_size: int = 512
    num_recurrent_layers: int = 2
    num_stations: int = 8
    lookback: int = 12
    horizon: int = 1
    dropout_ratio: float = 0.2
    input_channels: int = 9
    seed: int = 0

    def __post_init__(self) -> None:
        if self.cell_kind not in CELL_KINDS:
            raise ConfigError(f"cell_kind: unknown kind {self.cell_kind!r}; expected one of {', '.join(CELL_KINDS)}")
        for name in ("hidden_size", "num_recurrent_layers", "num_stations", "lookback", "horizon", "input_channels"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if not 0 <= self.dropout_ratio < 1:
            raise ConfigError(f"dropout_ratio must lie in [0, 1), got {self.dropout_ratio}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed}")


@dataclass
class Model:
    config: ModelConfig
    layers: list[CellParams]
    W_out: np.ndarray
    b_out: np.ndarray

    def parameters(self) -> dict[str, np.ndarray]:
        """Named views of every parameter array; in-place updates change the model."""
        params: dict[str, np.ndarray] = {}
        for i, layer in enumerate(self.layers):
            for name, value in layer.arrays.items():
                params[f"layer{i}.{name}"] = value
        params["dense.W"] = self.W_out
        params["dense.b"] = self.b_out
        return params

    @property
    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.parameters().items()}

    def restore(self, values: dict[str, np.ndarray]) -> None:
        for k, target in self.parameters().items():
            target[...] = values[k]

    def clone(self) -> Model:
        return copy.deepcopy(self)


@dataclass
class ForwardCache:
    steps: list[list[StepCache]]
    top: np.ndarray
    mask: np.ndarray | None


@dataclass
class TrainReport:
    train_losses: list[float]
    val_losses: list[float]
    initial_val_loss: float
    epochs_run: int
    stop_reason: str
    best_epoch: int
    wall_time: float = field(default=0.0, compare=False)

    @property
    def best_val_loss(self) -> float:
        return min([self.initial_val_loss, *self.val_losses])


def layer_input_sizes(config: ModelConfig) -> list[int]:
    first = config.lookback * config.input_channels if config.cell_kind == "ffnn" else config.input_channels
    return [first] + [config.hidden_size] * (config.num_recurrent_layers - 1)


def build_model(config: ModelConfig) -> Model:
    """Initialize every parameter uniform on ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` from ``config.seed``."""
    rng = SeededRng(config.seed)
    layers = [build_cell(config.cell_kind, n_in, config.hidden_size, rng) for n_in in layer_input_sizes(config)]
    W_out = init_params((config.num_stations, config.hidden_size), rng)
    b_out = init_params((config.num_stations, 1), rng, fan_in=config.hidden_size)[:, 0].copy()
    return Model(config, layers, W_out, b_out)


def model_from_parameters(config: ModelConfig, values: dict[str, np.ndarray]) -> Model:
    """Assemble a model from named arrays (the inverse of ``Model.parameters``)."""
    layers = []
    for i, n_in in enumerate(layer_input_sizes(config)):
        names = param_names(config.cell_kind)
        arrays = {name: np.array(values[f"layer{i}.{name}"], dtype=np.float64) for name in names}
        layers.append(CellParams(config.cell_kind, n_in, config.hidden_size, arrays))
    W_out = np.array(values["dense.W"], dtype=np.float64)
    b_out = np.array(values["dense.b"], dtype=np.float64)
    if W_out.shape != (config.num_stations, config.hidden_size) or b_out.shape != (config.num_stations,):
        raise ShapeError(f"dense head has shapes {W_out.shape}, {b_out.shape} for config {config}")
    return Model(config, layers, W_out, b_out)


def _dropout_mask(shape: tuple[int, ...], ratio: float, rng: SeededRng) -> np.ndarray:
    return (rng.random(shape) >= ratio) / (1.0 - ratio)


def apply_dropout(v: np.ndarray, ratio: float, rng: SeededRng | None, training: bool) -> np.ndarray:
    """Inverted dropout: zero each entry with probability ``ratio``, scale survivors by ``1/(1-ratio)``."""
    if not 0 <= ratio < 1:
        raise InvalidArgumentError(f"dropout ratio must lie in [0, 1), got {ratio}")
    if not training or ratio == 0:
        return v.copy()
    if rng is None:
        raise InvalidArgumentError("training-mode dropout needs a random source")
    return v * _dropout_mask(v.shape, ratio, rng)


def forward(
    model: Model,
    window: np.ndarray,
    training: bool = False,
    rng: SeededRng | None = None,
) -> tuple[np.ndarray, ForwardCache | None]:
    """Predict all stations for one window ``(lookback, channels)`` or a batch ``(batch, lookback, channels)``."""
    cfg = model.config
    window = np.asarray(window, dtype=np.float64)
    if window.ndim not in (2, 3) or window.shape[-2:] != (cfg.lookback, cfg.input_channels):
        raise ShapeError(f"window has shape {window.shape}, expected (..., {cfg.lookback}, {cfg.input_channels})")
    single = window.ndim == 2
    X = window[None] if single else window
    batch = X.shape[0]

    steps: list[list[StepCache]] = []
    if cfg.cell_kind == "ffnn":
        h = X.reshape(batch, -1)
        for params in model.layers:
            h, cache = ffnn_step(h, params, FFNN_ACTIVATION, training)
            steps.append([cache] if cache else [])
        top = h
    else:
        seq = [X[:, t, :] for t in range(cfg.lookback)]
        for params in model.layers:
            state = initial_state(cfg.cell_kind, cfg.hidden_size, batch)
            outputs, layer_caches = [], []
            for x_t in seq:
                state, cache = cell_step(x_t, state, params, training)
                outputs.append(state.h)
                if cache is not None:
                    layer_caches.append(cache)
            steps.append(layer_caches)
            seq = outputs
        top = seq[-1]

    mask = None
    if training and cfg.dropout_ratio > 0:
        if rng is None:
            raise InvalidArgumentError("training-mode forward with dropout needs a random source")
        mask = _dropout_mask(top.shape, cfg.dropout_ratio, rng)
        top = top * mask

    pred = top @ model.W_out.T + model.b_out
    cache = ForwardCache(steps, top, mask) if training else None
    return (pred[0] if single else pred), cache


def predict(model: Model, inputs: np.ndarray) -> np.ndarray:
    """Eval-mode predictions for a stack of windows, in chunks."""
    out = [forward(model, inputs[i : i + EVAL_CHUNK])[0] for i in range(0, len(inputs), EVAL_CHUNK)]
    if not out:
        return np.zeros((0, model.config.num_stations))
    return np.concatenate(out, axis=0)


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over every station (and batch row) with its gradient."""
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} does not match target shape {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff)), (2.0 / diff.size) * diff


def bptt(
    model: Model,
    inputs: np.ndarray,
    targets: np.ndarray,
    rng: SeededRng | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean batch loss and its exact gradient with respect to every parameter."""
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if len(inputs) == 0:
        raise InvalidArgumentError("bptt needs a nonempty batch")
    if inputs.ndim != 3 or targets.shape != (len(inputs), model.config.num_stations):
        raise ShapeError(f"batch shapes {inputs.shape} / {targets.shape} do not conform to {model.config}")

    cfg = model.config
    pred, cache = forward(model, inputs, training=True, rng=rng)
    assert cache is not None
    loss, d_pred = mse_loss(pred, targets)

    grads: dict[str, np.ndarray] = {"dense.W": d_pred.T @ cache.top, "dense.b": d_pred.sum(axis=0)}
    d_top = d_pred @ model.W_out
    if cache.mask is not None:
        d_top = d_top * cache.mask

    layer_grads: list[dict[str, np.ndarray]] = [{} for _ in model.layers]
    if cfg.cell_kind == "ffnn":
        d = d_top
        for i in reversed(range(len(model.layers))):
            step = cell_step_backward("ffnn", cache.steps[i][0], d, None, model.layers[i])
            layer_grads[i] = step.params
            d = step.x
    else:
        zeros = np.zeros_like(d_top)
        d_seq = [zeros] * (cfg.lookback - 1) + [d_top]
        for i in reversed(range(len(model.layers))):
            params = model.layers[i]
            acc = {k: np.zeros_like(v) for k, v in params.arrays.items()}
            dh_next = np.zeros_like(d_top)
            dc_next = np.zeros_like(d_top) if cfg.cell_kind == "lstm" else None
            dx_seq: list[np.ndarray] = [zeros] * cfg.lookback
            for t in reversed(range(cfg.lookback)):
                step = cell_step_backward(cfg.cell_kind, cache.steps[i][t], d_seq[t] + dh_next, dc_next, params)
                for k, g in step.params.items():
                    acc[k] += g
                dx_seq[t] = step.x
                dh_next = step.h_prev
                dc_next = step.c_prev
            layer_grads[i] = acc
            d_seq = dx_seq

    ordered: dict[str, np.ndarray] = {}
    for i, g in enumerate(layer_grads):
        for name in param_names(cfg.cell_kind):
            ordered[f"layer{i}.{name}"] = g[name]
    ordered["dense.W"] = grads["dense.W"]
    ordered["dense.b"] = grads["dense.b"]
    return loss, ordered


def dataset_loss(model: Model, dataset: WindowedDataset) -> float:
    """Eval-mode MSE over a whole dataset."""
    pred = predict(model, dataset.inputs)
    diff = pred - dataset.targets
    return float(np.mean(diff * diff))


def _check_dataset(model: Model, dataset: WindowedDataset, name: str) -> None:
    cfg = model.config
    if len(dataset) == 0:
        raise EmptyDatasetError(f"{name} dataset is empty")
    if dataset.inputs.shape[1:] != (cfg.lookback, cfg.input_channels):
        raise ConfigError(
            f"{name} windows have shape {dataset.inputs.shape[1:]}, "
            f"model expects ({cfg.lookback}, {cfg.input_channels})"
        )
    if dataset.targets.shape[1] != cfg.num_stations:
        raise ConfigError(f"{name} targets have {dataset.targets.shape[1]} stations, model has {cfg.num_stations}")
    if dataset.horizon != cfg.horizon:
        raise ConfigError(f"{name} dataset horizon {dataset.horizon} differs from model horizon {cfg.horizon}")


def fit(
    model: Model,
    train: WindowedDataset,
    val: WindowedDataset,
    optimizer: OptimizerSpec,
    epochs: int,
    batch_size: int,
    patience: int,
    rng: SeededRng,
    on_epoch: Callable[[int, float, float], None] | None = None,
) -> TrainReport:
    """Mini-batch training with early stopping on validation loss.

    Batches are reshuffled every epoch. Training stops after ``patience`` epochs without a
    validation improvement and the best-validation parameters are restored before returning.
    """
    _check_dataset(model, train, "training")
    _check_dataset(model, val, "validation")
    if epochs < 0 or batch_size < 1 or patience < 1:
        raise ConfigError(f"need epochs >= 0, batch_size >= 1, patience >= 1; got {epochs}, {batch_size}, {patience}")

    started = time.perf_counter()
    params = model.parameters()
    state = init_optimizer(params, optimizer)
    initial = dataset_loss(model, val)
    best_loss, best_epoch, best_params = initial, 0, model.snapshot()
    train_losses: list[float] = []
    val_losses: list[float] = []
    stop_reason = "max_epochs"
    stale = 0

    n = len(train)
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            loss, grads = bptt(model, train.inputs[idx], train.targets[idx], rng)
            optimizer_step(params, grads, state, optimizer)
            total += loss * len(idx)
        train_loss = total / n
        val_loss = dataset_loss(model, val)
        train_losses.append(train_loss)
        val_losses.append(val_loss)
        if on_epoch is not None:
            on_epoch(epoch, train_loss, val_loss)

        if val_loss < best_loss:
            best_loss, best_epoch, best_params = val_loss, epoch, model.snapshot()
            stale = 0
        else:
            stale += 1
            if stale >= patience:
                stop_reason = "early_stop"
                break

    model.restore(best_params)
    return TrainReport(
        train_losses=train_losses,
        val_losses=val_losses,
        initial_val_loss=initial,
        epochs_run=len(train_losses),
        stop_reason=stop_reason,
        best_epoch=best_epoch,
        wall_time=time.perf_counter() - started,
    )
