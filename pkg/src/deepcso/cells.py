"""Forward and backward steps for the four unit types: FFNN layer, RNN, LSTM and GRU cells.

Recurrent gates hold one weight matrix over the concatenation ``[x_t, h_prev]`` (shape
``hidden x (input + hidden)``); weights are shared across time steps. Every step accepts a single
vector or a batch of row vectors.
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from deepcso.errors import InvalidArgumentError, InvalidStateError, ShapeError
from deepcso.numerics import SeededRng, activate, activation_grad, affine, init_params, sigmoid

CELL_KINDS: tuple[str, ...] = ("ffnn", "rnn", "lstm", "gru")
GATES: dict[str, tuple[str, ...]] = {
    "ffnn": ("",),
    "rnn": ("",),
    "lstm": ("i", "f", "o", "c"),
    "gru": ("z", "r", "h"),
}


def param_names(kind: str) -> tuple[str, ...]:
    """Parameter names for a cell kind: ``W``/``b`` or ``W_<gate>``/``b_<gate>`` per gate."""
    if kind not in GATES:
        raise InvalidArgumentError(f"unknown cell kind {kind!r}; expected one of {', '.join(CELL_KINDS)}")
    names: list[str] = []
    for gate in GATES[kind]:
        suffix = f"_{gate}" if gate else ""
        names += [f"W{suffix}", f"b{suffix}"]
    return tuple(names)


@dataclass
class CellParams:
    kind: str
    input_size: int
    hidden_size: int
    arrays: dict[str, np.ndarray]

    def __post_init__(self) -> None:
        expected = param_names(self.kind)
        if tuple(self.arrays) != expected:
            raise ShapeError(f"{self.kind} cell needs parameters {expected}, got {tuple(self.arrays)}")
        cols = self.input_size if self.kind == "ffnn" else self.input_size + self.hidden_size
        for name, value in self.arrays.items():
            want = (self.hidden_size, cols) if name.startswith("W") else (self.hidden_size,)
            if value.shape != want:
                raise ShapeError(f"{self.kind} parameter {name} has shape {value.shape}, expected {want}")
            if not np.all(np.isfinite(value)):
                raise InvalidStateError(f"{self.kind} parameter {name} has non-finite entries")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    @property
    def size(self) -> int:
        return sum(a.size for a in self.arrays.values())


@dataclass
class CellState:
    h: np.ndarray
    c: np.ndarray | None = None


@dataclass
class StepCache:
    kind: str
    values: dict[str, np.ndarray]
    forced: frozenset[str] = field(default_factory=frozenset)
    act: str = "tanh"


class StepGrads(NamedTuple):
    params: dict[str, np.ndarray]
    x: np.ndarray
    h_prev: np.ndarray | None
    c_prev: np.ndarray | None


def build_cell(
    kind: str,
    input_size: int,
    hidden_size: int,
    rng: SeededRng,
    scheme: str = "uniform_fanin",
) -> CellParams:
    """Initialize a cell; biases are drawn with the fan-in of their gate's weight matrix."""
    cols = input_size if kind == "ffnn" else input_size + hidden_size
    arrays: dict[str, np.ndarray] = {}
    for name in param_names(kind):
        if name.startswith("W"):
            arrays[name] = init_params((hidden_size, cols), rng, scheme)
        else:
            arrays[name] = init_params((hidden_size, 1), rng, scheme, fan_in=cols)[:, 0].copy()
    return CellParams(kind, input_size, hidden_size, arrays)


def _expect(params: CellParams, kind: str) -> None:
    if params.kind != kind:
        raise InvalidArgumentError(f"expected {kind} parameters, got {params.kind}")


def _check(v: np.ndarray, size: int, what: str) -> None:
    if v.shape[-1] != size:
        raise ShapeError(f"{what} has shape {v.shape}, expected last dimension {size}")


def _check_state(v: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(v)):
        raise InvalidStateError(f"{what} has non-finite entries")


def _forced(gate: np.ndarray, name: str, force: Mapping[str, float] | None) -> np.ndarray:
    if force and name in force:
        return np.full_like(gate, force[name])
    return gate


def _wgrad(da: np.ndarray, inp: np.ndarray) -> np.ndarray:
    return np.outer(da, inp) if da.ndim == 1 else da.T @ inp


def _bgrad(da: np.ndarray) -> np.ndarray:
    return da.copy() if da.ndim == 1 else da.sum(axis=0)


def ffnn_step(
    x: np.ndarray,
    params: CellParams,
    act: str = "tanh",
    training: bool = False,
) -> tuple[np.ndarray, StepCache | None]:
    _expect(params, "ffnn")
    _check(x, params.input_size, "input")
    pre = affine(params["W"], x, params["b"])
    out = activate(pre, act)
    cache = StepCache("ffnn", {"x": x, "pre": pre, "out": out}, act=act) if training else None
    return out, cache


def ffnn_forward(x: np.ndarray, params: CellParams, act: str = "tanh") -> np.ndarray:
    """One dense layer: ``act(W x + b)``."""
    return ffnn_step(x, params, act)[0]


def rnn_step(
    x_t: np.ndarray,
    h_prev: np.ndarray,
    params: CellParams,
    training: bool = False,
) -> tuple[np.ndarray, StepCache | None]:
    """``h_t = tanh(W [x_t, h_prev] + b)``."""
    _expect(params, "rnn")
    _check(x_t, params.input_size, "input")
    _check(h_prev, params.hidden_size, "previous hidden state")
    _check_state(h_prev, "previous hidden state")
    xh = np.concatenate([x_t, h_prev], axis=-1)
    h = np.tanh(affine(params["W"], xh, params["b"]))
    cache = StepCache("rnn", {"xh": xh, "h": h}) if training else None
    return h, cache


def lstm_step(
    x_t: np.ndarray,
    state: CellState,
    params: CellParams,
    training: bool = False,
    *,
    force: Mapping[str, float] | None = None,
) -> tuple[CellState, StepCache | None]:
    """One LSTM step.

    ``force`` pins gates (``"i"``, ``"f"``, ``"o"``) to a constant; it exists for tests of the
    memory-persistence property.
    """
    _expect(params, "lstm")
    if state.c is None:
        raise InvalidStateError("lstm state needs a memory cell")
    _check(x_t, params.input_size, "input")
    _check(state.h, params.hidden_size, "previous hidden state")
    _check(state.c, params.hidden_size, "previous cell state")
    _check_state(state.h, "previous hidden state")
    _check_state(state.c, "previous cell state")

    xh = np.concatenate([x_t, state.h], axis=-1)
    i = _forced(sigmoid(affine(params["W_i"], xh, params["b_i"])), "i", force)
    f = _forced(sigmoid(affine(params["W_f"], xh, params["b_f"])), "f", force)
    o = _forced(sigmoid(affine(params["W_o"], xh, params["b_o"])), "o", force)
    c_bar = np.tanh(affine(params["W_c"], xh, params["b_c"]))
    c = f * state.c + i * c_bar
    tanh_c = np.tanh(c)
    h = o * tanh_c

    cache = None
    if training:
        values = {"xh": xh, "i": i, "f": f, "o": o, "c_bar": c_bar, "c_prev": state.c, "tanh_c": tanh_c}
        cache = StepCache("lstm", values, frozenset(force or ()))
    return CellState(h, c), cache


def gru_step(
    x_t: np.ndarray,
    h_prev: np.ndarray,
    params: CellParams,
    training: bool = False,
    *,
    force: Mapping[str, float] | None = None,
) -> tuple[np.ndarray, StepCache | None]:
    """One GRU step with the update gate on the candidate: ``h_t = z*h~ + (1-z)*h_prev``."""
    _expect(params, "gru")
    _check(x_t, params.input_size, "input")
    _check(h_prev, params.hidden_size, "previous hidden state")
    _check_state(h_prev, "previous hidden state")

    xh = np.concatenate([x_t, h_prev], axis=-1)
    z = _forced(sigmoid(affine(params["W_z"], xh, params["b_z"])), "z", force)
    r = _forced(sigmoid(affine(params["W_r"], xh, params["b_r"])), "r", force)
    xrh = np.concatenate([x_t, r * h_prev], axis=-1)
    h_cand = np.tanh(affine(params["W_h"], xrh, params["b_h"]))
    h = z * h_cand + (1.0 - z) * h_prev

    cache = None
    if training:
        values = {"xh": xh, "xrh": xrh, "z": z, "r": r, "h_cand": h_cand, "h_prev": h_prev}
        cache = StepCache("gru", values, frozenset(force or ()))
    return h, cache


def cell_step(
    x_t: np.ndarray,
    state: CellState,
    params: CellParams,
    training: bool = False,
) -> tuple[CellState, StepCache | None]:
    """Dispatch one recurrent step on ``params.kind``."""
    if params.kind == "lstm":
        return lstm_step(x_t, state, params, training)
    if params.kind == "gru":
        h, cache = gru_step(x_t, state.h, params, training)
    elif params.kind == "rnn":
        h, cache = rnn_step(x_t, state.h, params, training)
    else:
        raise InvalidArgumentError(f"{params.kind} is not a recurrent cell")
    return CellState(h), cache


def initial_state(kind: str, hidden_size: int, batch: int | None = None) -> CellState:
    shape = (hidden_size,) if batch is None else (batch, hidden_size)
    c = np.zeros(shape) if kind == "lstm" else None
    return CellState(np.zeros(shape), c)


def cell_step_backward(
    kind: str,
    cache: StepCache,
    grad_h: np.ndarray,
    grad_c: np.ndarray | None,
    params: CellParams,
) -> StepGrads:
    """Gradients of one step with respect to its parameters, input and previous state.

    ``grad_h`` is the loss gradient on the step's output (``h_t``, or ``y`` for ffnn) and
    ``grad_c`` the gradient on ``c_t`` (lstm only). Accumulating over time is the caller's job.
    """
    if cache is None or cache.kind != kind or params.kind != kind:
        got = None if cache is None else cache.kind
        raise InvalidArgumentError(f"backward for {kind} got cache {got} and {params.kind} parameters")
    v = cache.values
    n_in = params.input_size

    if kind == "ffnn":
        da = grad_h * activation_grad(v["pre"], v["out"], cache.act)
        grads = {"W": _wgrad(da, v["x"]), "b": _bgrad(da)}
        return StepGrads(grads, da @ params["W"], None, None)

    if kind == "rnn":
        da = grad_h * (1.0 - v["h"] * v["h"])
        grads = {"W": _wgrad(da, v["xh"]), "b": _bgrad(da)}
        dxh = da @ params["W"]
        return StepGrads(grads, dxh[..., :n_in], dxh[..., n_in:], None)

    if kind == "lstm":
        i, f, o, c_bar, tanh_c = v["i"], v["f"], v["o"], v["c_bar"], v["tanh_c"]
        dc = grad_h * o * (1.0 - tanh_c * tanh_c)
        if grad_c is not None:
            dc = dc + grad_c
        pre_grads = {
            "i": dc * c_bar * i * (1.0 - i),
            "f": dc * v["c_prev"] * f * (1.0 - f),
            "o": grad_h * tanh_c * o * (1.0 - o),
            "c": dc * i * (1.0 - c_bar * c_bar),
        }
        grads: dict[str, np.ndarray] = {}
        dxh = np.zeros_like(v["xh"])
        for gate, da in pre_grads.items():
            if gate in cache.forced:
                da = np.zeros_like(da)
            grads[f"W_{gate}"] = _wgrad(da, v["xh"])
            grads[f"b_{gate}"] = _bgrad(da)
            dxh += da @ params[f"W_{gate}"]
        grads = {name: grads[name] for name in param_names("lstm")}
        return StepGrads(grads, dxh[..., :n_in], dxh[..., n_in:], dc * f)

    if kind == "gru":
        z, r, h_cand, h_prev = v["z"], v["r"], v["h_cand"], v["h_prev"]
        dh_prev = grad_h * (1.0 - z)
        da_h = grad_h * z * (1.0 - h_cand * h_cand)
        dxrh = da_h @ params["W_h"]
        d_rh = dxrh[..., n_in:]
        dh_prev = dh_prev + d_rh * r
        da_z = grad_h * (h_cand - h_prev) * z * (1.0 - z)
        da_r = d_rh * h_prev * r * (1.0 - r)
        if "z" in cache.forced:
            da_z = np.zeros_like(da_z)
        if "r" in cache.forced:
            da_r = np.zeros_like(da_r)
        dxh = da_z @ params["W_z"] + da_r @ params["W_r"]
        grads = {
            "W_z": _wgrad(da_z, v["xh"]),
            "b_z": _bgrad(da_z),
            "W_r": _wgrad(da_r, v["xh"]),
            "b_r": _bgrad(da_r),
            "W_h": _wgrad(da_h, v["xrh"]),
            "b_h": _bgrad(da_h),
        }
        dx = dxh[..., :n_in] + dxrh[..., :n_in]
        return StepGrads(grads, dx, dh_prev + dxh[..., n_in:], None)

    raise InvalidArgumentError(f"unknown cell kind {kind!r}")
