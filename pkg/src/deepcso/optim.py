"""Gradient-descent optimizers over named parameter arrays.

Parameters and gradients are ``dict[str, numpy.ndarray]`` with identical keys and shapes;
``optimizer_step`` updates the parameter arrays in place.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from deepcso.errors import ConfigError, InvalidArgumentError, ShapeError

OPTIMIZER_KINDS: tuple[str, ...] = ("adam", "sgd", "rmsprop", "adagrad", "adadelta", "adamax", "nadam")

DEFAULT_LEARNING_RATES: dict[str, float] = {
    "adam": 1e-3,
    "sgd": 1e-2,
    "rmsprop": 1e-3,
    "adagrad": 1e-2,
    "adadelta": 1.0,
    "adamax": 2e-3,
    "nadam": 2e-3,
}


@dataclass(frozen=True)
class OptimizerSpec:
    kind: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    rho: float = 0.9
    clip_norm: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in OPTIMIZER_KINDS:
            raise ConfigError(f"optimizer: unknown kind {self.kind!r}; expected one of {', '.join(OPTIMIZER_KINDS)}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        for name in ("beta1", "beta2", "rho"):
            value = getattr(self, name)
            if not 0 <= value < 1:
                raise ConfigError(f"{name} must lie in [0, 1), got {value}")
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon}")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ConfigError(f"clip_norm must be > 0 when set, got {self.clip_norm}")

    @classmethod
    def for_kind(cls, kind: str, **overrides: float | None) -> OptimizerSpec:
        """Spec with the method's usual default learning rate."""
        if kind not in DEFAULT_LEARNING_RATES:
            raise ConfigError(f"optimizer: unknown kind {kind!r}; expected one of {', '.join(OPTIMIZER_KINDS)}")
        spec = cls(kind=kind, learning_rate=DEFAULT_LEARNING_RATES[kind])
        return replace(spec, **overrides) if overrides else spec


@dataclass
class OptimizerState:
    kind: str
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def init_optimizer(params: dict[str, np.ndarray], spec: OptimizerSpec) -> OptimizerState:
    """Zeroed accumulators mirroring ``params``."""
    return OptimizerState(
        kind=spec.kind,
        m={k: np.zeros_like(p) for k, p in params.items()},
        v={k: np.zeros_like(p) for k, p in params.items()},
    )


def clip_by_global_norm(grads: dict[str, np.ndarray], threshold: float) -> dict[str, np.ndarray]:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm <= threshold:
        return grads
    scale = threshold / norm
    return {k: g * scale for k, g in grads.items()}


def optimizer_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    spec: OptimizerSpec,
) -> tuple[dict[str, np.ndarray], OptimizerState]:
    """Apply one update in place and return ``(params, state)``."""
    if state.kind != spec.kind:
        raise InvalidArgumentError(f"optimizer state is for {state.kind}, spec is {spec.kind}")
    if grads.keys() != params.keys():
        raise ShapeError(f"gradient keys {sorted(grads)} do not match parameter keys {sorted(params)}")
    for k, p in params.items():
        if grads[k].shape != p.shape:
            raise ShapeError(f"gradient {k} has shape {grads[k].shape}, parameter has {p.shape}")
        if k not in state.m:
            raise ShapeError(f"optimizer state has no accumulator for {k}")

    if spec.clip_norm is not None:
        grads = clip_by_global_norm(grads, spec.clip_norm)

    state.step += 1
    t = state.step
    lr, b1, b2, eps, rho = spec.learning_rate, spec.beta1, spec.beta2, spec.epsilon, spec.rho

    for k, p in params.items():
        g = grads[k]
        m, v = state.m[k], state.v[k]
        if spec.kind == "sgd":
            p -= lr * g
        elif spec.kind == "adam":
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            m_hat = m / (1.0 - b1**t)
            v_hat = v / (1.0 - b2**t)
            p -= lr * m_hat / (np.sqrt(v_hat) + eps)
        elif spec.kind == "rmsprop":
            v *= rho
            v += (1.0 - rho) * (g * g)
            p -= lr * g / (np.sqrt(v) + eps)
        elif spec.kind == "adagrad":
            v += g * g
            p -= lr * g / (np.sqrt(v) + eps)
        elif spec.kind == "adadelta":
            # m holds the running average of squared updates
            v *= rho
            v += (1.0 - rho) * (g * g)
            delta = np.sqrt(m + eps) / np.sqrt(v + eps) * g
            m *= rho
            m += (1.0 - rho) * (delta * delta)
            p -= lr * delta
        elif spec.kind == "adamax":
            m *= b1
            m += (1.0 - b1) * g
            np.maximum(b2 * v, np.abs(g), out=v)
            p -= (lr / (1.0 - b1**t)) * m / (v + eps)
        elif spec.kind == "nadam":
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            m_hat = b1 * m / (1.0 - b1 ** (t + 1)) + (1.0 - b1) * g / (1.0 - b1**t)
            v_hat = v / (1.0 - b2**t)
            p -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params, state
