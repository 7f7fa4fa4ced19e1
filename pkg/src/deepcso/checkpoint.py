"""Checkpoint document: a JSON text holding the model config, scaler, lag spec and every parameter.

Floats are written with Python's shortest round-trip repr, so a load reproduces the parameters
bit for bit. Unknown fields are rejected.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any

import numpy as np

from deepcso.data import LagSpec, ScalerParams, write_text_atomic
from deepcso.errors import CheckpointParseError, DeepCSOError, UnsupportedVersionError
from deepcso.model import Model, ModelConfig, model_from_parameters

CHECKPOINT_VERSION = 1
FIELDS = ("version", "config", "scaler", "lag_spec", "targets", "parameters")


@dataclass
class Checkpoint:
    model: Model
    scaler: ScalerParams | None = None
    lag_spec: LagSpec | None = None
    targets: tuple[str, ...] | None = None


def render_checkpoint(checkpoint: Checkpoint) -> str:
    model = checkpoint.model
    doc: dict[str, Any] = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "scaler": None,
        "lag_spec": None,
        "targets": list(checkpoint.targets) if checkpoint.targets is not None else None,
        "parameters": {
            name: {"shape": list(value.shape), "values": [float(x) for x in value.ravel()]}
            for name, value in model.parameters().items()
        },
    }
    if checkpoint.scaler is not None:
        s = checkpoint.scaler
        doc["scaler"] = {"channels": list(s.channel_ids), "min": list(s.mins), "max": list(s.maxs)}
    if checkpoint.lag_spec is not None:
        doc["lag_spec"] = {channel: list(lags) for channel, lags in checkpoint.lag_spec.lags.items()}
    return json.dumps(doc, allow_nan=False) + "\n"


def save_checkpoint(
    model: Model,
    path: Path | str,
    *,
    scaler: ScalerParams | None = None,
    lag_spec: LagSpec | None = None,
    targets: tuple[str, ...] | None = None,
) -> None:
    write_text_atomic(path, render_checkpoint(Checkpoint(model, scaler, lag_spec, targets)))


def _offset(text: str, key: str) -> int:
    pos = text.find(f'"{key}"')
    return max(pos, 0)


def _reject_unknown(text: str, section: str, got: Any, known: tuple[str, ...]) -> None:
    if not isinstance(got, dict):
        raise CheckpointParseError(f"{section} must be a JSON object", offset=_offset(text, section))
    unknown = sorted(set(got) - set(known))
    if unknown:
        raise CheckpointParseError(f"unknown {section} field {unknown[0]!r}", offset=_offset(text, unknown[0]))
    missing = [k for k in known if k not in got]
    if missing:
        raise CheckpointParseError(f"{section} is missing field {missing[0]!r}", offset=len(text))


def parse_checkpoint(raw: bytes) -> Checkpoint:
    try:
        text = raw.decode("ascii")
    except UnicodeDecodeError as e:
        raise CheckpointParseError("checkpoint is not ASCII text", offset=e.start) from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise CheckpointParseError(f"malformed checkpoint: {e.msg}", offset=e.pos) from None
    if not isinstance(doc, dict):
        raise CheckpointParseError("checkpoint must be a JSON object", offset=0)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise UnsupportedVersionError(
            f"checkpoint version {doc.get('version')!r} is not supported (expected {CHECKPOINT_VERSION})"
        )
    _reject_unknown(text, "checkpoint", doc, FIELDS)
    config_fields = tuple(f.name for f in fields(ModelConfig))

    try:
        _reject_unknown(text, "config", doc["config"], config_fields)
        config = ModelConfig(**doc["config"])
        values: dict[str, np.ndarray] = {}
        for name, entry in doc["parameters"].items():
            _reject_unknown(text, f"parameter {name}", entry, ("shape", "values"))
            shape = tuple(entry["shape"])
            flat = np.array(entry["values"], dtype=np.float64)
            if flat.size != math.prod(shape):
                raise CheckpointParseError(
                    f"parameter {name} has {flat.size} values for shape {shape}", offset=_offset(text, name)
                )
            values[name] = flat.reshape(shape)
        model = model_from_parameters(config, values)
        expected = set(model.parameters())
        if set(values) != expected:
            extra = sorted(set(values) ^ expected)[0]
            raise CheckpointParseError(f"parameter set mismatch at {extra!r}", offset=_offset(text, extra))

        scaler = None
        if doc["scaler"] is not None:
            s = doc["scaler"]
            _reject_unknown(text, "scaler", s, ("channels", "min", "max"))
            scaler = ScalerParams(tuple(s["channels"]), tuple(map(float, s["min"])), tuple(map(float, s["max"])))
        lag_spec = None
        if doc["lag_spec"] is not None:
            lag_spec = LagSpec({channel: tuple(lags) for channel, lags in doc["lag_spec"].items()})
        targets = tuple(doc["targets"]) if doc["targets"] is not None else None
    except CheckpointParseError:
        raise
    except DeepCSOError as e:
        raise CheckpointParseError(f"invalid checkpoint content: {e}", offset=0) from None
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointParseError(f"invalid checkpoint content: {e!r}", offset=0) from None
    return Checkpoint(model, scaler, lag_spec, targets)


def load_checkpoint(path: Path | str) -> Checkpoint:
    """Read a checkpoint; a truncated or corrupt file raises and yields no model."""
    return parse_checkpoint(Path(path).read_bytes())
