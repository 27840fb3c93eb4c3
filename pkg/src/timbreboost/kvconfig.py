"""Flat `key = value` config files backed by frozen dataclasses."""

from __future__ import annotations

from dataclasses import fields
from pathlib import Path


def read_key_values(path) -> dict:
    """Parse `key = value` lines; blank lines and `#` comments are skipped."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def write_key_values(path, mapping: dict) -> None:
    Path(path).write_text("".join(f"{k} = {v}\n" for k, v in mapping.items()), encoding="utf-8")


def _coerce(key, raw, default):
    raw = raw.strip()
    if isinstance(default, tuple):
        return tuple(s.strip() for s in raw.split(",") if s.strip())
    if default is None:
        return None if raw.lower() in ("", "none") else float(raw)
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


class KeyValueConfig:
    """Mixin for frozen dataclasses loadable from a flat key-value file."""

    @classmethod
    def from_mapping(cls, mapping: dict):
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in mapping.items():
            if key not in known:
                raise ValueError(f"unknown {cls.__name__} key {key!r}")
            kwargs[key] = _coerce(key, raw, known[key].default) if isinstance(raw, str) else raw
        return cls(**kwargs)

    @classmethod
    def load(cls, path):
        return cls.from_mapping(read_key_values(path))

    def to_mapping(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                out[f.name] = ",".join(v)
            elif v is None:
                out[f.name] = "none"
            else:
                out[f.name] = repr(v) if isinstance(v, float) else str(v)
        return out

    def save(self, path) -> None:
        write_key_values(path, self.to_mapping())
