"""Key-value configuration files.

One ``key = value`` per line, ``#`` starts a comment, ``[name]`` opens a
section.  Keys before the first section header belong to the ``gen``
section.  Values are parsed as ints, floats, booleans, bracketed lists
(``[0.1, 0.2]``) or bracketed maps (``[finance: 1.5, art: 0.9]``); anything
else is kept as a string.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any

DEFAULT_SECTION = "gen"


class ConfigError(ValueError):
    pass


def _scalar(token: str) -> Any:
    token = token.strip()
    low = token.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    try:
        return int(token)
    except ValueError:
        pass
    try:
        return float(token)
    except ValueError:
        pass
    if len(token) >= 2 and token[0] == token[-1] and token[0] in "\"'":
        return token[1:-1]
    return token


def parse_value(text: str) -> Any:
    text = text.strip()
    if text.startswith("[") and text.endswith("]"):
        inner = text[1:-1].strip()
        if not inner:
            return []
        items = [item.strip() for item in inner.split(",")]
        if all(":" in item for item in items):
            out = {}
            for item in items:
                key, _, val = item.partition(":")
                out[key.strip()] = _scalar(val)
            return out
        if any(":" in item for item in items):
            raise ConfigError(f"mixed list/map value: {text}")
        return [_scalar(item) for item in items]
    return _scalar(text)


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, dict):
        return "[" + ", ".join(f"{k}: {format_value(v)}" for k, v in value.items()) + "]"
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(format_value(v) for v in value) + "]"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config_text(text: str) -> dict[str, dict[str, Any]]:
    sections: dict[str, dict[str, Any]] = {DEFAULT_SECTION: {}}
    current = DEFAULT_SECTION
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]") and "=" not in line:
            current = line[1:-1].strip()
            if not current:
                raise ConfigError(f"line {lineno}: empty section name")
            sections.setdefault(current, {})
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        try:
            sections[current][key.strip()] = parse_value(value)
        except ConfigError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None
    return sections


def load_config(path) -> dict[str, dict[str, Any]]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"))
