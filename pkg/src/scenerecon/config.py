"""Strict config parsing: unknown keys are rejected with a suggestion."""

from __future__ import annotations

import difflib
import json
from dataclasses import fields, is_dataclass
from pathlib import Path


class ConfigError(ValueError):
    """Raised for malformed config files or unknown/invalid keys."""


def dataclass_from_dict(cls, data: dict, where: str = ""):
    """Build a dataclass from a dict, refusing keys the class does not have."""
    if not is_dataclass(cls):
        raise TypeError(f"{cls} is not a dataclass")
    if not isinstance(data, dict):
        raise ConfigError(f"{where or cls.__name__}: expected an object, got {type(data).__name__}")
    names = [f.name for f in fields(cls)]
    for key in data:
        if key not in names:
            hint = difflib.get_close_matches(key, names, n=1)
            suffix = f' (did you mean "{hint[0]}"?)' if hint else ""
            raise ConfigError(f'{where or cls.__name__}: unknown key "{key}"{suffix}')
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where or cls.__name__}: {exc}") from exc


def load_json(path: str | Path) -> dict:
    """Parse a JSON file, reporting the byte offset of any syntax error."""
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        byte_offset = len(text[: exc.pos].encode("utf-8"))
        raise ConfigError(
            f"{path}: malformed JSON at byte offset {byte_offset} "
            f"(line {exc.lineno}, column {exc.colno}): {exc.msg}"
        ) from exc
