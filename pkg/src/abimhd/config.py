"""Flat key = value run configuration.

Grammar: one ``key = value`` pair per line; ``#`` starts a comment (full
line or trailing); ``[section]`` headers prefix subsequent keys as
``section.key``. Keys and section names are case-sensitive; values are
stored verbatim (trimmed) and typed on access.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    """Malformed configuration text or an out-of-range parameter."""


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    section = ""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if not section:
                raise ConfigError(f"line {lineno}: empty section name")
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        full = f"{section}.{key}" if section else key
        out[full] = value.strip()
    return out


@dataclass
class RunConfig:
    """Typed access to parsed key/value pairs with range validation."""

    values: dict[str, str] = field(default_factory=dict)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}")
        return cls(parse_config_text(text))

    def get_str(self, key: str, default: str | None = None) -> str:
        if key in self.values:
            return self.values[key]
        if default is None:
            raise ConfigError(f"missing required key {key!r}")
        return default

    def get_int(self, key: str, default: int | None = None, *,
                minimum: int | None = None, even: bool = False) -> int:
        raw = self.values.get(key)
        if raw is None:
            if default is None:
                raise ConfigError(f"missing required key {key!r}")
            val = default
        else:
            try:
                val = int(raw)
            except ValueError:
                raise ConfigError(f"{key} must be an integer, got {raw!r}")
        if minimum is not None and val < minimum:
            raise ConfigError(f"{key} must be >= {minimum}, got {val}")
        if even and val % 2 != 0:
            raise ConfigError(f"{key} must be even, got {val}")
        return val

    def get_float(self, key: str, default: float | None = None, *,
                  minimum: float | None = None, maximum: float | None = None,
                  exclusive_min: float | None = None) -> float:
        raw = self.values.get(key)
        if raw is None:
            if default is None:
                raise ConfigError(f"missing required key {key!r}")
            val = float(default)
        else:
            try:
                val = float(raw)
            except ValueError:
                raise ConfigError(f"{key} must be a number, got {raw!r}")
        if exclusive_min is not None and not val > exclusive_min:
            raise ConfigError(f"{key} must be > {exclusive_min}, got {val}")
        if minimum is not None and val < minimum:
            raise ConfigError(f"{key} must be >= {minimum}, got {val}")
        if maximum is not None and val > maximum:
            raise ConfigError(f"{key} must be <= {maximum}, got {val}")
        return val

    def get_bool(self, key: str, default: bool = False) -> bool:
        raw = self.values.get(key)
        if raw is None:
            return default
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key} must be a boolean, got {raw!r}")

    def get_float_list(self, key: str, default: list[float] | None = None) -> list[float]:
        raw = self.values.get(key)
        if raw is None:
            if default is None:
                raise ConfigError(f"missing required key {key!r}")
            return list(default)
        try:
            return [float(x) for x in raw.replace(",", " ").split()]
        except ValueError:
            raise ConfigError(f"{key} must be a list of numbers, got {raw!r}")
