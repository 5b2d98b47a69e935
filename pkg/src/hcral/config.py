"""Experiment configuration as flat ``key = value`` text.

Example::

    # comments start with '#'
    seed = 0
    loss = hcral            # hcral | focal+giou | ghmc+giou
    reg_weight = 1.0
    cls.theta = 5
    reg.gamma = 1.2         # 'none' drops the IoU suppression term
    assign.l = 3
    opt.steps = 500
    scene.canvas = 128
    focal.gamma = 2.0

Every key not listed in :data:`KEYS` is rejected. Omitted keys keep their
defaults. :func:`dump_config` writes the full effective config back in the
same format.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, replace
from pathlib import Path

from .assign import AssignConfig
from .cls_loss import ClsConfig
from .harness import LOSS_KINDS, LossConfig, OptConfig, SceneConfig
from .reg_loss import RegConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    loss: str = "hcral"
    reg_weight: float = 1.0
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25
    scene: SceneConfig = field(default_factory=SceneConfig)
    cls: ClsConfig = field(default_factory=ClsConfig)
    reg: RegConfig = field(default_factory=RegConfig)
    assign: AssignConfig = field(default_factory=AssignConfig)
    opt: OptConfig = field(default_factory=OptConfig)

    def loss_config(self) -> LossConfig:
        return LossConfig(self.loss, self.cls, self.reg, self.focal_gamma, self.focal_alpha,
                          self.reg_weight)


_SECTIONS = ("scene", "cls", "reg", "assign", "opt")
_TOP = ("seed", "loss", "reg_weight")
_RENAMED = {"focal.gamma": "focal_gamma", "focal.alpha": "focal_alpha"}


def _keys() -> dict[str, str]:
    """Config key -> declared type name."""
    types = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}
    keys = {k: types[k] for k in _TOP}
    keys.update({k: types[v] for k, v in _RENAMED.items()})
    defaults = ExperimentConfig()
    for sec in _SECTIONS:
        for f in dataclasses.fields(getattr(defaults, sec)):
            keys[f"{sec}.{f.name}"] = f.type
    return keys


KEYS = _keys()


def _parse_value(key: str, text: str, type_name: str):
    text = text.strip()
    optional = type_name.startswith("Optional[")
    base = type_name[len("Optional["):-1] if optional else type_name
    if optional and text.lower() == "none":
        return None
    try:
        if base == "bool":
            if text.lower() in ("true", "1", "yes"):
                return True
            if text.lower() in ("false", "0", "no"):
                return False
            raise ValueError(text)
        if base == "int":
            return int(text)
        if base == "float":
            return float(text)
        if base == "str":
            return text.strip("\"'")
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {base}") from None
    raise ConfigError(f"{key}: unsupported type {type_name}")


def parse_config_text(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"unknown config key {key!r} (line {lineno})")
        values[key] = _parse_value(key, value, KEYS[key])
    return apply_overrides(base or ExperimentConfig(), values)


def apply_overrides(cfg: ExperimentConfig, values: dict[str, object]) -> ExperimentConfig:
    top, nested = {}, {sec: {} for sec in _SECTIONS}
    for key, value in values.items():
        if key not in KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        if key in _RENAMED:
            top[_RENAMED[key]] = value
        elif "." in key:
            sec, name = key.split(".", 1)
            nested[sec][name] = value
        else:
            top[key] = value
    try:
        for sec, changes in nested.items():
            if changes:
                top[sec] = replace(getattr(cfg, sec), **changes)
        out = replace(cfg, **top)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if out.loss not in LOSS_KINDS:
        raise ConfigError(f"loss: must be one of {LOSS_KINDS}, got {out.loss!r}")
    return out


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    return parse_config_text(Path(path).read_text())


def format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def config_items(cfg: ExperimentConfig) -> list[tuple[str, object]]:
    items = []
    for key in KEYS:
        if key in _RENAMED:
            items.append((key, getattr(cfg, _RENAMED[key])))
        elif "." in key:
            sec, name = key.split(".", 1)
            items.append((key, getattr(getattr(cfg, sec), name)))
        else:
            items.append((key, getattr(cfg, key)))
    return items


def dump_config(cfg: ExperimentConfig) -> str:
    return "".join(f"{k} = {format_value(v)}\n" for k, v in config_items(cfg))
