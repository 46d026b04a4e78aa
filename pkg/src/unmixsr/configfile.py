"""Flat key-value configuration files with typed schema validation.

Syntax: one ``key = value`` pair per line, ``#`` starts a comment, blank
lines are skipped. Unknown and duplicate keys are rejected so typos fail
loudly. Supported field types: int, float, bool, str and float_list
(comma-separated).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

from .errors import ConfigError

__all__ = ["Field", "parse_config", "load_config", "format_config"]

_TYPES = ("int", "float", "bool", "str", "float_list")


@dataclass(frozen=True)
class Field:
    """Schema entry: value type, default (None means required), choices."""

    type: str
    default: Any = None
    required: bool = False
    choices: Optional[Sequence[Any]] = None

    def __post_init__(self):
        if self.type not in _TYPES:
            raise ConfigError(f"unknown schema field type {self.type!r}")


def _convert(key: str, raw: str, field: Field) -> Any:
    try:
        if field.type == "int":
            return int(raw)
        if field.type == "float":
            return float(raw)
        if field.type == "bool":
            lowered = raw.lower()
            if lowered in ("true", "1", "yes", "on"):
                return True
            if lowered in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if field.type == "float_list":
            return [float(part) for part in raw.split(",") if part.strip() != ""]
        return raw
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: {exc}") from exc


def parse_config(text: str, schema: Dict[str, Field]) -> Dict[str, Any]:
    values: Dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in schema:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate config key {key!r}")
        value = _convert(key, raw, schema[key])
        field = schema[key]
        if field.choices is not None and value not in field.choices:
            raise ConfigError(
                f"line {lineno}: key {key!r} must be one of {list(field.choices)}, "
                f"got {value!r}")
        values[key] = value
    for key, field in schema.items():
        if key not in values:
            if field.required:
                raise ConfigError(f"missing required config key {key!r}")
            values[key] = field.default
    return values


def load_config(path, schema: Dict[str, Field]) -> Dict[str, Any]:
    return parse_config(Path(path).read_text(), schema)


def format_config(values: Dict[str, Any]) -> str:
    """Serialize values back to the flat format (sorted keys)."""
    lines = []
    for key in sorted(values):
        value = values[key]
        if isinstance(value, bool):
            rendered = "true" if value else "false"
        elif isinstance(value, (list, tuple)):
            rendered = ",".join(repr(float(v)) for v in value)
        else:
            rendered = str(value)
        lines.append(f"{key} = {rendered}")
    return "\n".join(lines) + "\n"
