"""Flat ``key = value`` config files mapped onto dataclasses."""

from __future__ import annotations

import dataclasses

from .errors import ConfigError


def read_config(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    if path is None:
        return out
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from exc
    for no, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError("config", f"line {no}: expected 'key = value'")
        out[key.strip()] = value.strip()
    return out


def _convert(name, value, default):
    if isinstance(default, bool):
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(name, f"expected a boolean, got {value!r}")
    try:
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
    except ValueError as exc:
        raise ConfigError(name, f"expected a number, got {value!r}") from exc
    return value


def build(cls, values: dict, **overrides):
    """Instantiate ``cls`` from the keys it owns; returns ``(instance, used_keys)``."""
    fields = {f.name: f for f in dataclasses.fields(cls) if f.init}
    kw, used = {}, set()
    for key, value in values.items():
        if key in fields:
            f = fields[key]
            default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
            kw[key] = _convert(key, value, default)
            used.add(key)
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return cls(**kw), used


def check_unknown(values: dict, *used_sets):
    known = set().union(*used_sets)
    extra = sorted(set(values) - known)
    if extra:
        raise ConfigError(extra[0], "unknown config key")


def as_dict(obj) -> dict:
    return {k: v for k, v in dataclasses.asdict(obj).items() if not k.startswith("_")}
