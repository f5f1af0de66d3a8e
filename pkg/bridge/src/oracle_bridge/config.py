"""Bridge configuration: a JSON file, command-line flags, or both.

Flags override file values field by field. The grid accepts either a float
or a "1/255"-style fraction string; 8-bit image models should declare
1/255 so the server enforces exact byte alignment on every query.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field


class ConfigError(Exception):
    """Invalid bridge configuration; message lists every problem found."""


def parse_grid(value) -> float | None:
    if value is None:
        return None
    if isinstance(value, str):
        num, sep, den = value.partition("/")
        try:
            grid = float(num) / float(den) if sep else float(num)
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"grid must be a number or a fraction: {value!r}") from exc
    else:
        grid = float(value)
    if not (0.0 < grid <= 1.0):
        raise ConfigError(f"grid must lie in (0, 1], got {grid}")
    return grid


@dataclass(frozen=True)
class BridgeConfig:
    """Where to listen, what model to load, and how queries are validated.

    flagged_classes only matters for predicates returning class labels; a
    label predicate with an empty set is a misconfiguration and every query
    to it earns an error reply rather than a silent never-flagged verdict.
    """

    host: str = "127.0.0.1"
    port: int = 0
    model_path: str = ""
    dimension: int = 0
    grid: float | None = None
    flagged_classes: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        problems = []
        if not self.model_path:
            problems.append("model_path is required")
        if self.dimension < 1:
            problems.append(f"dimension must be >= 1, got {self.dimension}")
        if self.grid is not None and not (0.0 < self.grid <= 1.0):
            problems.append(f"grid must lie in (0, 1], got {self.grid}")
        if not (0 <= self.port <= 65535):
            problems.append(f"port must lie in [0, 65535], got {self.port}")
        if problems:
            raise ConfigError("; ".join(problems))


def load_config(path: str | None, overrides: dict) -> BridgeConfig:
    """Merge a JSON config file (optional) with non-None flag overrides."""
    merged: dict = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                loaded = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config must be a JSON object")
        merged.update(loaded)
    merged.update({k: v for k, v in overrides.items() if v is not None})

    try:
        return BridgeConfig(
            host=str(merged.get("host", "127.0.0.1")),
            port=int(merged.get("port", 0)),
            model_path=str(merged.get("model_path", "")),
            dimension=int(merged.get("dimension", 0)),
            grid=parse_grid(merged.get("grid")),
            flagged_classes=frozenset(int(c) for c in
                                      merged.get("flagged_classes", ())),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad config field: {exc}") from None
