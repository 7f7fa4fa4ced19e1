"""Single steps of the dense, RNN, LSTM and GRU units and their backward passes."""

from __future__ import annotations

import math

import numpy as np
import pytest

from deepcso.cells import (
    CellParams,
    CellState,
    build_cell,
    cell_step_backward,
    ffnn_forward,
    ffnn_step,
    gru_step,
    lstm_step,
    param_names,
    rnn_step,
)
from deepcso.errors import InvalidArgumentError, InvalidStateError, ShapeError
from deepcso.numerics import SeededRng
from tests.gradcheck import max_relative_error, numeric_gradient


def sig(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


def zero_cell(kind: str, n_in: int, n_hidden: int) -> CellParams:
    cols = n_in if kind == "ffnn" else n_in + n_hidden
    arrays = {
        name: np.zeros((n_hidden, cols)) if name.startswith("W") else np.zeros(n_hidden) for name in param_names(kind)
    }
    return CellParams(kind, n_in, n_hidden, arrays)


def one_dim_cell(kind: str, **weights: float | list[float]) -> CellParams:
    params = zero_cell(kind, 1, 1)
    for name, row in weights.items():
        params.arrays[name][0] = row
    return params


class TestParams:
    def test_parameter_names_per_kind(self):
        assert param_names("rnn") == ("W", "b")
        assert param_names("lstm") == ("W_i", "b_i", "W_f", "b_f", "W_o", "b_o", "W_c", "b_c")
        assert param_names("gru") == ("W_z", "b_z", "W_r", "b_r", "W_h", "b_h")

    def test_unknown_kind(self):
        with pytest.raises(InvalidArgumentError, match="unknown cell kind"):
            param_names("transformer")

    def test_gate_matrices_cover_input_and_hidden(self):
        params = build_cell("lstm", 9, 4, SeededRng(0))
        assert params["W_f"].shape == (4, 13)
        assert params["b_f"].shape == (4,)
        assert params.size == 4 * (4 * 13 + 4)

    def test_wrong_shape_is_rejected(self):
        params = zero_cell("rnn", 2, 3)
        arrays = dict(params.arrays, W=np.zeros((3, 2)))
        with pytest.raises(ShapeError, match="expected"):
            CellParams("rnn", 2, 3, arrays)

    def test_non_finite_parameter_is_rejected(self):
        params = zero_cell("rnn", 2, 3)
        arrays = dict(params.arrays, b=np.array([0.0, math.nan, 0.0]))
        with pytest.raises(InvalidStateError):
            CellParams("rnn", 2, 3, arrays)


class TestFfnn:
    def test_zero_parameters_with_sigmoid_give_half(self):
        out = ffnn_forward(np.array([0.3, -2.0, 5.0]), zero_cell("ffnn", 3, 4), "sigmoid")
        np.testing.assert_array_equal(out, np.full(4, 0.5))

    def test_identity_weights_pass_input_through(self):
        params = zero_cell("ffnn", 3, 3)
        params.arrays["W"][...] = np.eye(3)
        x = np.array([0.1, -0.7, 2.0])
        np.testing.assert_array_equal(ffnn_forward(x, params, "identity"), x)

    def test_hand_evaluation(self):
        params = zero_cell("ffnn", 2, 1)
        params.arrays["W"][0] = [1.0, 1.0]
        params.arrays["b"][0] = -1.0
        np.testing.assert_array_equal(ffnn_forward(np.array([0.5, 0.5]), params, "sigmoid"), [0.5])

    def test_input_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ffnn_forward(np.zeros(4), zero_cell("ffnn", 3, 2))


class TestRnn:
    def test_zero_parameters_give_zero_state(self):
        h, _ = rnn_step(np.array([1.5, -2.0]), np.array([0.3, 0.9, -0.4]), zero_cell("rnn", 2, 3))
        np.testing.assert_array_equal(h, np.zeros(3))

    def test_bias_only(self):
        params = zero_cell("rnn", 2, 2)
        params.arrays["b"][...] = [0.25, -1.0]
        h, _ = rnn_step(np.array([4.0, 4.0]), np.zeros(2), params)
        np.testing.assert_allclose(h, np.tanh([0.25, -1.0]), rtol=0, atol=1e-15)

    def test_hand_evaluation(self):
        params = one_dim_cell("rnn", W=[1.0, 0.5])
        h, _ = rnn_step(np.array([0.2]), np.array([0.4]), params)
        assert h[0] == pytest.approx(math.tanh(0.4), abs=1e-15)
        assert h[0] == pytest.approx(0.37994896, abs=1e-8)

    def test_cache_only_in_training(self):
        params = zero_cell("rnn", 1, 1)
        assert rnn_step(np.zeros(1), np.zeros(1), params)[1] is None
        assert rnn_step(np.zeros(1), np.zeros(1), params, training=True)[1] is not None

    def test_hidden_shape_mismatch(self):
        with pytest.raises(ShapeError, match="previous hidden state"):
            rnn_step(np.zeros(2), np.zeros(4), zero_cell("rnn", 2, 3))


class TestLstm:
    def test_zero_parameters(self):
        state, _ = lstm_step(np.array([0.7]), CellState(np.zeros(1), np.ones(1)), zero_cell("lstm", 1, 1))
        np.testing.assert_array_equal(state.c, [0.5])
        assert state.h[0] == pytest.approx(0.5 * math.tanh(0.5), abs=1e-15)
        assert state.h[0] == pytest.approx(0.23105857, abs=1e-8)

    def test_hand_evaluation(self):
        params = one_dim_cell("lstm", W_i=[1.0, 0.0], W_f=[1.0, 0.0], W_o=[1.0, 0.0], W_c=[1.0, 0.0])
        state, _ = lstm_step(np.array([1.0]), CellState(np.zeros(1), np.zeros(1)), params)
        gate = sig(1.0)
        c = gate * math.tanh(1.0)
        assert state.c[0] == pytest.approx(c, abs=1e-15)
        assert state.c[0] == pytest.approx(0.55677, abs=1e-5)
        assert state.h[0] == pytest.approx(gate * math.tanh(c), abs=1e-15)

    def test_forced_forget_and_input_keep_memory_over_100_steps(self):
        rng = SeededRng(11)
        params = build_cell("lstm", 3, 4, rng)
        c0 = rng.uniform(-2, 2, (4,))
        state = CellState(np.zeros(4), c0.copy())
        for x in rng.uniform(-5, 5, (100, 3)):
            state, _ = lstm_step(x, state, params, force={"f": 1.0, "i": 0.0})
        assert np.array_equal(state.c, c0)

    def test_missing_memory_cell(self):
        with pytest.raises(InvalidStateError, match="memory cell"):
            lstm_step(np.zeros(1), CellState(np.zeros(1)), zero_cell("lstm", 1, 1))

    def test_non_finite_state(self):
        with pytest.raises(InvalidStateError):
            lstm_step(np.zeros(1), CellState(np.zeros(1), np.array([math.inf])), zero_cell("lstm", 1, 1))


class TestGru:
    def test_zero_parameters(self):
        h, _ = gru_step(np.array([0.1]), np.array([0.8]), zero_cell("gru", 1, 1))
        np.testing.assert_array_equal(h, [0.4])

    def test_forced_update_gate_keeps_state_over_100_steps(self):
        rng = SeededRng(12)
        params = build_cell("gru", 2, 3, rng)
        h0 = rng.uniform(-1, 1, (3,))
        h = h0.copy()
        for x in rng.uniform(-5, 5, (100, 2)):
            h, _ = gru_step(x, h, params, force={"z": 0.0})
        assert np.array_equal(h, h0)

    def test_hand_evaluation(self):
        params = one_dim_cell("gru", W_h=[0.0, 1.0])
        h, _ = gru_step(np.array([3.0]), np.array([0.6]), params)
        expected = 0.5 * math.tanh(0.3) + 0.5 * 0.6
        assert h[0] == pytest.approx(expected, abs=1e-15)
        assert h[0] == pytest.approx(0.44565, abs=1e-5)


def _step_outputs(kind: str, x: np.ndarray, h: np.ndarray, c: np.ndarray | None, params: CellParams):
    if kind == "ffnn":
        out, cache = ffnn_step(x, params, "tanh", training=True)
        return out, None, cache
    if kind == "rnn":
        out, cache = rnn_step(x, h, params, training=True)
        return out, None, cache
    if kind == "gru":
        out, cache = gru_step(x, h, params, training=True)
        return out, None, cache
    state, cache = lstm_step(x, CellState(h, c), params, training=True)
    return state.h, state.c, cache


@pytest.mark.parametrize("kind", ["ffnn", "rnn", "lstm", "gru"])
@pytest.mark.parametrize("batch", [None, 4])
def test_backward_matches_central_differences(kind, batch):
    rng = SeededRng(42)
    n_in, n_hidden = 2, 3
    params = build_cell(kind, n_in, n_hidden, rng)
    lead = () if batch is None else (batch,)
    x = rng.uniform(-1, 1, (*lead, n_in))
    h = rng.uniform(-1, 1, (*lead, n_hidden))
    c = rng.uniform(-1, 1, (*lead, n_hidden))
    gh = rng.uniform(-1, 1, (*lead, n_hidden))
    gc = rng.uniform(-1, 1, (*lead, n_hidden)) if kind == "lstm" else None

    def loss() -> float:
        out_h, out_c, _ = _step_outputs(kind, x, h, c, params)
        total = float(np.sum(gh * out_h))
        if gc is not None:
            total += float(np.sum(gc * out_c))
        return total

    _, _, cache = _step_outputs(kind, x, h, c, params)
    grads = cell_step_backward(kind, cache, gh, gc, params)

    for name, value in params.arrays.items():
        assert max_relative_error(grads.params[name], numeric_gradient(loss, value)) < 1e-4, name
    assert max_relative_error(grads.x, numeric_gradient(loss, x)) < 1e-4
    if kind != "ffnn":
        assert max_relative_error(grads.h_prev, numeric_gradient(loss, h)) < 1e-4
    if kind == "lstm":
        assert max_relative_error(grads.c_prev, numeric_gradient(loss, c)) < 1e-4


def test_one_dim_rnn_gradient_within_absolute_tolerance():
    params = one_dim_cell("rnn", W=[0.8, -0.3], b=0.1)
    x, h = np.array([0.2]), np.array([0.4])

    def loss() -> float:
        return float(rnn_step(x, h, params)[0][0])

    _, cache = rnn_step(x, h, params, training=True)
    grads = cell_step_backward("rnn", cache, np.ones(1), None, params)
    for name, value in params.arrays.items():
        np.testing.assert_allclose(grads.params[name], numeric_gradient(loss, value), rtol=0, atol=1e-6)


@pytest.mark.parametrize("kind", ["rnn", "lstm", "gru"])
def test_zero_upstream_gradient_gives_zero_gradients(kind):
    rng = SeededRng(5)
    params = build_cell(kind, 2, 3, rng)
    _, _, cache = _step_outputs(kind, rng.uniform(-1, 1, (2,)), rng.uniform(-1, 1, (3,)), np.zeros(3), params)
    grads = cell_step_backward(kind, cache, np.zeros(3), np.zeros(3) if kind == "lstm" else None, params)
    for g in grads.params.values():
        assert not np.any(g)
    assert not np.any(grads.x)
    assert not np.any(grads.h_prev)


def test_backward_rejects_mismatched_cache():
    params = zero_cell("gru", 1, 1)
    _, cache = rnn_step(np.zeros(1), np.zeros(1), zero_cell("rnn", 1, 1), training=True)
    with pytest.raises(InvalidArgumentError, match="backward for gru got cache rnn"):
        cell_step_backward("gru", cache, np.ones(1), None, params)
