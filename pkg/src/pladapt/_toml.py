"""Flat ``dotted.key = value`` text format (a TOML subset).

Reading goes through :mod:`tomli`; writing emits one dotted key per line
so files diff cleanly. Floats are written with ``repr``, which round-trips
IEEE-754 doubles exactly.
"""

from __future__ import annotations

import json
import math
from typing import Any, Mapping

import tomli

from .exceptions import ConfigError


def loads(text: str) -> dict:
    try:
        return tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        col = getattr(exc, "colno", None)
        msg = getattr(exc, "msg", str(exc))
        raise ConfigError(f"parse error at line {line}, column {col}: {msg}",
                          line=line, column=col) from exc


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(int(value))
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(float(value))
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(format_value(v) for v in value) + "]"
    # numpy scalars and the like
    if hasattr(value, "item"):
        return format_value(value.item())
    raise TypeError(f"cannot serialize {type(value).__name__}")


def flatten(mapping: Mapping, prefix: str = "") -> dict:
    out = {}
    for key, value in mapping.items():
        name = f"{prefix}{key}"
        if isinstance(value, Mapping):
            out.update(flatten(value, name + "."))
        elif value is not None:
            out[name] = value
    return out


def dumps(mapping: Mapping) -> str:
    flat = flatten(mapping)
    return "".join(f"{key} = {format_value(value)}\n" for key, value in flat.items())
