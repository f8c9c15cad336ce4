"""Flat ``key = value`` config files.

One assignment per line, ``#`` starts a comment. Values are Python literals
(numbers, ``True``/``False``, ``None``, tuples, lists, quoted strings); a bare
word that is not a literal is kept as a string, so ``motion = linear`` works.
"""

from __future__ import annotations

import ast
import dataclasses
from pathlib import Path
from typing import Any

from .features import BackboneConfig
from .head import DecodeConfig
from .memory import SamplerConfig
from .model import ModelConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


def parse_value(text: str) -> Any:
    text = text.strip()
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def parse_text(text: str) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key.isidentifier():
            raise ConfigError(f"line {lineno}: bad key {key!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = parse_value(value)
    return out


def load(path) -> dict[str, Any]:
    return parse_text(Path(path).read_text())


def dump(values: dict[str, Any]) -> str:
    return "".join(f"{k} = {v!r}\n" for k, v in values.items())


def _fields(cls) -> set[str]:
    return {f.name for f in dataclasses.fields(cls)}


def _take(values: dict, cls, rename: dict[str, str] | None = None, skip: tuple = ()) -> dict:
    rename = rename or {}
    names = _fields(cls)
    out = {}
    for key in list(values):
        target = rename.get(key, key)
        if target in names and key not in skip:
            out[target] = values.pop(key)
    return out


def _build(cls, kwargs):
    for k in ("widths", "strides", "target_size", "image_size", "start", "velocity"):
        if isinstance(kwargs.get(k), list):
            kwargs[k] = tuple(kwargs[k])
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{cls.__name__}: {exc}") from exc


def training_configs(values: dict[str, Any]) -> tuple[TrainConfig, ModelConfig]:
    """Split a flat dict into a TrainConfig and ModelConfig.

    ``seed`` seeds both data order and weight init; ``model_seed`` overrides
    the init seed alone. Unknown keys are an error.
    """
    values = dict(values)
    bb = _take(values, BackboneConfig)
    mc = _take(values, ModelConfig, {"model_seed": "seed"}, skip=("seed", "backbone"))
    tc = _take(values, TrainConfig)
    if values:
        raise ConfigError(f"unknown training keys: {sorted(values)}")
    mc.setdefault("seed", tc.get("seed", 0))
    model = _build(ModelConfig, {**mc, "backbone": _build(BackboneConfig, bb)})
    return _build(TrainConfig, tc), model


def sampler_config(values: dict[str, Any]) -> SamplerConfig:
    return _build(SamplerConfig, dict(values))


def decode_config(values: dict[str, Any]) -> DecodeConfig:
    return _build(DecodeConfig, dict(values))
