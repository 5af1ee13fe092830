"""Run configuration: YAML/JSON documents validated against dataclass defaults.

Every section maps onto one dataclass; unknown keys are rejected with a
close-match suggestion and values are type-checked against the defaults.
"""

from __future__ import annotations

import dataclasses
import difflib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError, ContractViolation
from .evaluation import InferConfig
from .model import TrackerConfig
from .progressive import DataSpec
from .training import DTConfig, Schedule

OUT_ROOT_ENV = "DTTRACK_OUT"


@dataclass(frozen=True)
class BenchSpec:
    seed: int = 1234
    per_suite: int = 16
    length: int = 30
    canvas: int = 64


@dataclass(frozen=True)
class SweepSpec:
    factor: str = "layers"
    values: tuple = (1, 2, 4)
    seeds: tuple = (0,)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out_dir: str = ""
    precision: str = "f32"
    threads: int = 1
    model: TrackerConfig = TrackerConfig()
    train: DTConfig = DTConfig()
    data: DataSpec = DataSpec()
    bench: BenchSpec = BenchSpec()
    infer: InferConfig = InferConfig()
    plan: tuple = ()
    sweep: SweepSpec = SweepSpec()
    teacher: str = ""  # checkpoint manifest used by `train` for small-teacher transfer
    checkpoint: str = ""  # checkpoint manifest evaluated by `eval`

    def to_dict(self) -> dict:
        return _to_plain(self)


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _to_plain(v) for k, v in obj.items()}
    return obj


def _default_of(cls, f):
    if f.default is not dataclasses.MISSING:
        return f.default
    if f.default_factory is not dataclasses.MISSING:  # type: ignore[misc]
        return f.default_factory()  # type: ignore[misc]
    return None


def _coerce(value, default, path: str):
    if dataclasses.is_dataclass(default):
        if not isinstance(value, dict):
            raise ConfigError(path, f"expected a mapping, got {type(value).__name__}")
        return _build(type(default), value, path, base=default)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(path, f"expected a list, got {value!r}")
        return tuple(_plain_item(v) for v in value)
    if isinstance(default, dict):
        if not isinstance(value, dict):
            raise ConfigError(path, f"expected a mapping, got {value!r}")
        return dict(value)
    return value


def _plain_item(v):
    return tuple(v) if isinstance(v, list) and all(not isinstance(x, (dict, list)) for x in v) else v


def _build(cls, raw: dict, path: str = "", base=None):
    names = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        where = f"{path}.{key}" if path else key
        if key not in names:
            hint = difflib.get_close_matches(key, list(names), n=1)
            msg = f"unknown key {key!r}" + (f"; did you mean {hint[0]!r}?" if hint else "")
            raise ConfigError(where, msg)
        default = getattr(base, key) if base is not None else _default_of(cls, names[key])
        kwargs[key] = _coerce(value, default, where)
    try:
        return dataclasses.replace(base, **kwargs) if base is not None else cls(**kwargs)
    except (ContractViolation, TypeError, ValueError) as exc:
        raise ConfigError(path or cls.__name__, str(exc)) from exc


def _set_path(doc: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    cur = doc
    for p in parts[:-1]:
        cur = cur.setdefault(p, {})
        if not isinstance(cur, dict):
            raise ConfigError(dotted, "override path crosses a non-mapping value")
    cur[parts[-1]] = value


def _parse_scalar(text: str):
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError:
        return text


def parse_config(path=None, overrides: dict | None = None, sets: list[str] | None = None) -> RunConfig:
    """Load a config file (YAML or JSON), then apply ``overrides`` (dotted keys) and ``key=value`` sets."""
    doc: dict = {}
    if path:
        p = Path(path)
        if not p.exists():
            raise ConfigError(str(p), "config file not found")
        try:
            doc = yaml.safe_load(p.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(str(p), f"not a valid YAML/JSON document: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(str(p), "top level must be a mapping")
    for k, v in (overrides or {}).items():
        if v is not None:
            _set_path(doc, k, v)
    for item in sets or []:
        if "=" not in item:
            raise ConfigError(item, "expected key=value")
        k, v = item.split("=", 1)
        _set_path(doc, k.strip(), _parse_scalar(v.strip()))
    cfg = _build(RunConfig, doc)
    if not cfg.out_dir:
        cfg = dataclasses.replace(cfg, out_dir=os.environ.get(OUT_ROOT_ENV, "runs"))
    if cfg.precision not in ("f32", "f64"):
        raise ConfigError("precision", f"expected f32 or f64, got {cfg.precision!r}")
    if cfg.threads < 1:
        raise ConfigError("threads", "must be >= 1")
    return cfg


def dump_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))


def config_json(cfg: RunConfig) -> str:
    return json.dumps(cfg.to_dict(), sort_keys=True)


def resolved_defaults() -> dict[str, Any]:
    """The paper-derived training defaults as resolved from an empty config."""
    t = parse_config().train
    return {
        "lambda_iou": t.lambda_iou,
        "lambda_l1": t.lambda_l1,
        "lambda_align": t.lambda_align,
        "lambda_transfer": t.lambda_transfer,
        "mask_ratio": t.mask_ratio,
        "lr_drop_fraction": t.lr_drop_fraction,
        "base_lr": t.base_lr,
        "weight_decay": t.weight_decay,
    }


__all__ = ["RunConfig", "BenchSpec", "SweepSpec", "parse_config", "dump_config", "resolved_defaults", "Schedule"]
