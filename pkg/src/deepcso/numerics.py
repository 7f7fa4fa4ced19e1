"""Array primitives shared by every deepcso module.

Matrices and vectors are plain ``numpy.float64`` arrays (row-major). Functions that take a
vector also accept a batch of vectors stacked as rows, so training can run batched.
"""

from __future__ import annotations

import math
from typing import Literal

import numpy as np

from deepcso.errors import InvalidArgumentError, ShapeError

ActivationKind = Literal["sigmoid", "tanh", "identity", "relu"]
InitScheme = Literal["uniform_fanin", "zeros"]

ACTIVATIONS: tuple[str, ...] = ("sigmoid", "tanh", "identity", "relu")
RNG_ALGORITHM = "PCG64"


class SeededRng:
    """Deterministic random source: a PCG64 generator with an explicit 64-bit seed.

    Single consumer; do not draw from one instance on several threads.
    """

    algorithm = RNG_ALGORITHM

    def __init__(self, seed: int) -> None:
        if not 0 <= seed < 2**64:
            raise InvalidArgumentError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def __repr__(self) -> str:
        return f"SeededRng(seed={self.seed}, algorithm={self.algorithm!r})"

    def uniform(self, low: float, high: float, size: tuple[int, ...]) -> np.ndarray:
        return self._gen.uniform(low, high, size=size)

    def random(self, size: int | tuple[int, ...]) -> np.ndarray:
        return self._gen.random(size=size)

    def normal(self, scale: float, size: int | tuple[int, ...]) -> np.ndarray:
        return self._gen.normal(0.0, scale, size=size)

    def exponential(self, scale: float) -> float:
        return float(self._gen.exponential(scale))

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


def derive_seed(base_seed: int, *key: int) -> int:
    """Return a 64-bit seed derived deterministically from ``base_seed`` and an integer key."""
    seq = np.random.SeedSequence(entropy=base_seed, spawn_key=tuple(key))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def sigmoid(x: np.ndarray) -> np.ndarray:
    # exp(-|x|) never overflows; pick the branch by sign
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def activate(x: np.ndarray, kind: str) -> np.ndarray:
    """Apply an activation elementwise."""
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return np.tanh(x)
    if kind == "identity":
        return np.asarray(x, dtype=np.float64).copy()
    if kind == "relu":
        return np.maximum(x, 0.0)
    raise InvalidArgumentError(f"unknown activation {kind!r}; expected one of {', '.join(ACTIVATIONS)}")


def activation_grad(pre: np.ndarray, out: np.ndarray, kind: str) -> np.ndarray:
    """Derivative of the activation, given its pre-activation and its output."""
    if kind == "sigmoid":
        return out * (1.0 - out)
    if kind == "tanh":
        return 1.0 - out * out
    if kind == "identity":
        return np.ones_like(pre)
    if kind == "relu":
        return (pre > 0).astype(np.float64)
    raise InvalidArgumentError(f"unknown activation {kind!r}; expected one of {', '.join(ACTIVATIONS)}")


def activation(x: float, kind: str) -> float:
    """Scalar activation; rejects non-finite input."""
    if not math.isfinite(x):
        raise InvalidArgumentError(f"activation input must be finite, got {x}")
    return float(activate(np.float64(x), kind))


def affine(W: np.ndarray, x: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Return ``W @ x + b``; ``x`` may be a vector or a batch of row vectors."""
    if W.ndim != 2 or b.ndim != 1 or x.shape[-1] != W.shape[1] or W.shape[0] != b.shape[0]:
        raise ShapeError(f"affine shape mismatch: W {W.shape}, x {x.shape}, b {b.shape}")
    return x @ W.T + b


def init_params(
    shape: tuple[int, int],
    rng: SeededRng,
    scheme: str = "uniform_fanin",
    *,
    fan_in: int | None = None,
) -> np.ndarray:
    """Draw a ``rows x cols`` matrix.

    ``uniform_fanin`` is uniform on ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` with ``fan_in`` defaulting
    to ``cols``; ``zeros`` fills zeros without drawing.
    """
    rows, cols = shape
    if rows < 1 or cols < 1:
        raise InvalidArgumentError(f"init_params needs positive dimensions, got {shape}")
    if scheme == "zeros":
        return np.zeros((rows, cols), dtype=np.float64)
    if scheme != "uniform_fanin":
        raise InvalidArgumentError(f"unknown init scheme {scheme!r}")
    bound = 1.0 / math.sqrt(fan_in if fan_in is not None else cols)
    return rng.uniform(-bound, bound, (rows, cols))


def pearson(a: np.ndarray, b: np.ndarray) -> float | None:
    """Two-pass Pearson correlation; ``None`` when either side has zero variance."""
    da = a - a.mean()
    db = b - b.mean()
    saa = float(np.dot(da, da))
    sbb = float(np.dot(db, db))
    if saa == 0.0 or sbb == 0.0:
        return None
    r = float(np.dot(da, db)) / (math.sqrt(saa) * math.sqrt(sbb))
    return max(-1.0, min(1.0, r))
