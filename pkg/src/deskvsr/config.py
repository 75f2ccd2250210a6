"""INI-style key=value config files with sections; unknown keys are errors."""
from __future__ import annotations

import configparser
import dataclasses
import math
import typing

from .errors import ConfigError


def _coerce(raw, typ, where):
    raw = raw.strip()
    origin = typing.get_origin(typ)
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        if typ is tuple or origin is tuple:
            return tuple(int(v) for v in raw.replace(",", " ").split())
        if typ is str:
            return raw
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {getattr(typ, '__name__', typ)}") from None
    return raw


def _format(val):
    if isinstance(val, bool):
        return "true" if val else "false"
    if isinstance(val, tuple):
        return ", ".join(str(v) for v in val)
    if isinstance(val, float):
        return repr(val) if math.isfinite(val) else str(val)
    return str(val)


def _field_types(cls):
    hints = typing.get_type_hints(cls)
    return {f.name: hints.get(f.name, str) for f in dataclasses.fields(cls)}


def section_to_dataclass(cls, items, section):
    types = _field_types(cls)
    kwargs = {}
    for key, raw in items:
        if key not in types:
            raise ConfigError(f"unknown config key {key!r} in section [{section}]")
        kwargs[key] = _coerce(raw, types[key], f"[{section}] {key}")
    return cls(**kwargs)


def dataclass_to_section(obj):
    return {f.name: _format(getattr(obj, f.name)) for f in dataclasses.fields(obj)}


def read_config(path, schema):
    """Parse ``path`` into ``{section: dataclass instance}`` per ``schema`` {section: cls}.

    Sections absent from the file get the class defaults; unknown sections and
    keys raise :class:`ConfigError` naming the offender.
    """
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    parser.optionxform = str
    try:
        with open(path) as f:
            parser.read_file(f)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    for section in parser.sections():
        if section not in schema:
            raise ConfigError(f"unknown config section [{section}]")
    out = {}
    for section, cls in schema.items():
        items = parser.items(section) if parser.has_section(section) else []
        out[section] = section_to_dataclass(cls, items, section)
    return out


def write_config(path, sections):
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for name, obj in sections.items():
        parser[name] = dataclass_to_section(obj)
    with open(path, "w") as f:
        parser.write(f)
