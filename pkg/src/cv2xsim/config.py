"""INI scenario files.

Four sections mirror the config dataclasses: ``[scenario]`` holds the
:class:`~cv2xsim.engine.ScenarioConfig` scalars and lists, ``[pool]`` the
:class:`~cv2xsim.core.PoolConfig`, ``[link]`` the
:class:`~cv2xsim.phy.LinkBudget` and ``[mobility]`` the
:class:`~cv2xsim.engine.MobilityConfig`. Key names equal field names; lists
are comma separated. Unknown sections or keys are rejected.
"""

from __future__ import annotations

import configparser
import dataclasses
from importlib import resources
from pathlib import Path
from typing import Union

from .core import ConfigError, PoolConfig
from .engine import MobilityConfig, ScenarioConfig
from .phy import LinkBudget

SECTIONS = {"pool": PoolConfig, "link": LinkBudget, "mobility": MobilityConfig}
LIST_FIELDS = {"d_list": float, "aoi_th_list": int}


def default_config_path() -> Path:
    return Path(str(resources.files("cv2xsim") / "data" / "default.ini"))


def _convert(value: str, typ, key: str):
    try:
        if typ is bool:
            v = value.strip().lower()
            if v in ("1", "true", "yes", "on"):
                return True
            if v in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        return typ(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {typ.__name__}") from None


def parse_list(value: str, typ, key: str) -> tuple:
    items = [v.strip() for v in value.split(",") if v.strip()]
    if not items:
        raise ConfigError(f"{key}: empty list")
    return tuple(_convert(v, typ, key) for v in items)


def _field_types(cls) -> dict:
    defaults = cls()
    return {f.name: type(getattr(defaults, f.name)) for f in dataclasses.fields(cls)}


def _section(parser, name: str, cls):
    types = _field_types(cls)
    values = {}
    for key, raw in parser.items(name):
        if key not in types:
            raise ConfigError(f"[{name}] unknown key {key!r}")
        values[key] = _convert(raw, types[key], f"{name}.{key}")
    return cls(**values)


def loads(text: str) -> ScenarioConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    for name in parser.sections():
        if name != "scenario" and name not in SECTIONS:
            raise ConfigError(f"unknown section [{name}]")
    parts = {name: _section(parser, name, cls) if parser.has_section(name) else cls()
             for name, cls in SECTIONS.items()}
    scalars = {k: t for k, t in _field_types(ScenarioConfig).items()
               if k not in SECTIONS and k not in LIST_FIELDS}
    values = {}
    if parser.has_section("scenario"):
        for key, raw in parser.items("scenario"):
            if key in LIST_FIELDS:
                values[key] = parse_list(raw, LIST_FIELDS[key], f"scenario.{key}")
            elif key in scalars:
                values[key] = _convert(raw, scalars[key], f"scenario.{key}")
            else:
                raise ConfigError(f"[scenario] unknown key {key!r}")
    cfg = ScenarioConfig(**values, **parts)
    cfg.validate()
    return cfg


def load(path: Union[str, Path]) -> ScenarioConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return loads(text)


def dumps(cfg: ScenarioConfig) -> str:
    def fmt(v):
        if isinstance(v, tuple):
            return ", ".join(fmt(x) for x in v)
        if isinstance(v, bool):
            return "true" if v else "false"
        return repr(v) if isinstance(v, float) else str(v)

    lines = ["[scenario]"]
    for f in dataclasses.fields(ScenarioConfig):
        if f.name not in SECTIONS:
            lines.append(f"{f.name} = {fmt(getattr(cfg, f.name))}")
    for name in SECTIONS:
        lines += ["", f"[{name}]"]
        part = getattr(cfg, name)
        for f in dataclasses.fields(part):
            lines.append(f"{f.name} = {fmt(getattr(part, f.name))}")
    return "\n".join(lines) + "\n"
