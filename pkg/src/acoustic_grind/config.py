"""Flat ``section.key = value`` configuration files.

One file configures every subsystem::

    # comments start with '#'
    plant.contact_stiffness = 5e4
    encoder.band_low = 230
    controller.path = [[0.36, -0.1], [0.45, -0.1]]
    experiment.scenario = "straight_line"

Values are Python literals (numbers, strings, booleans, lists). A bare word
that is not a literal is kept as a string.
"""
from __future__ import annotations

import ast
import dataclasses
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    pass


def parse_value(text: str) -> Any:
    text = text.strip()
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def read_flat(path) -> dict[str, Any]:
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip() if not raw.lstrip().startswith("#") else ""
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        values[key] = parse_value(value)
    return values


def section(values: dict[str, Any], name: str, cls=None) -> dict[str, Any]:
    """Keys under ``name.`` with the prefix stripped.

    With a dataclass ``cls``, unknown keys raise instead of being ignored.
    """
    prefix = name + "."
    out = {k[len(prefix):]: v for k, v in values.items() if k.startswith(prefix)}
    if cls is not None:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(out) - known)
        if unknown:
            raise ConfigError(f"unknown {name} keys: {', '.join(unknown)}")
    return out


def write_flat(sections: dict[str, Any], path) -> None:
    """Write dataclass instances (or dicts) as a flat config file."""
    lines = []
    for name, obj in sections.items():
        items = dataclasses.asdict(obj) if dataclasses.is_dataclass(obj) else dict(obj)
        for key, value in items.items():
            if isinstance(value, tuple):
                value = list(value)
            lines.append(f"{name}.{key} = {value!r}")
        lines.append("")
    Path(path).write_text("\n".join(lines))
