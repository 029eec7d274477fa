"""Flat ``key = value`` configuration files and the run configuration.

The same reader serves the run config, the ingest field map and the
fixture configs. Lines starting with ``#`` or ``;`` are comments,
``[section]`` headers are ignored and values may be quoted.
"""
from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


_SECTION = re.compile(r"^\[[^\]]*\]$")


def parse_key_values(text: str, source: str = "<config>") -> Dict[str, str]:
    values: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line[0] in "#;" or _SECTION.match(line):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {raw!r}")
        key, value = line.split("=", 1)
        key, value = key.strip(), value.strip()
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if len(value) >= 2 and value[0] == value[-1] and value[0] in "\"'":
            value = value[1:-1]
        values[key] = value
    return values


def read_key_values(path: os.PathLike | str) -> Dict[str, str]:
    p = Path(path)
    return parse_key_values(p.read_text(encoding="utf-8"), source=str(p))


def _split_list(value: str) -> List[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


API_KEY_ENV = "OCCMATCH_API_KEY"

THRESHOLD_PREFIX = "threshold."


@dataclass
class RunConfig:
    """Everything one pipeline invocation needs.

    Relative paths in a config file are resolved against the file's own
    directory, so a fixture directory can be moved as a unit.
    """

    corpus_paths: List[Path] = field(default_factory=list)
    corpus_format: Optional[str] = None
    field_map: Optional[Path] = None
    drivers_dir: Optional[Path] = None
    provider: str = "local"
    endpoint: Optional[str] = None
    model: Optional[str] = None
    dimension: int = 512
    max_tokens: int = 8192
    parallelism: int = 1
    batch_size: int = 64
    threshold: float = 0.70
    driver_thresholds: Dict[str, float] = field(default_factory=dict)
    top_k: int = 10
    out_dir: Path = Path("out")
    rules: Optional[Path] = None
    max_failure_fraction: float = 0.0
    run_id: Optional[str] = None
    organisation: Optional[str] = None
    skills_file: Optional[Path] = None
    base_graph: Optional[Path] = None
    filter_locations: List[str] = field(default_factory=list)
    date_from: Optional[str] = None
    date_to: Optional[str] = None

    def validate(self) -> "RunConfig":
        for name, t in [("threshold", self.threshold), *self.driver_thresholds.items()]:
            if not -1.0 < t <= 1.0:
                raise ConfigError(f"{name} must lie in (-1, 1], got {t}")
        if self.top_k < 1:
            raise ConfigError(f"top_k must be >= 1, got {self.top_k}")
        if self.max_tokens < 1:
            raise ConfigError(f"max_tokens must be >= 1, got {self.max_tokens}")
        if self.dimension < 1:
            raise ConfigError(f"dimension must be >= 1, got {self.dimension}")
        if self.parallelism < 1 or self.batch_size < 1:
            raise ConfigError("parallelism and batch_size must be >= 1")
        if not 0.0 <= self.max_failure_fraction <= 1.0:
            raise ConfigError("max_failure_fraction must lie in [0, 1]")
        if self.provider not in ("local", "remote"):
            raise ConfigError(f"unknown provider {self.provider!r} (expected local or remote)")
        return self

    def threshold_for(self, driver_id: str) -> float:
        return self.driver_thresholds.get(driver_id, self.threshold)

    @classmethod
    def from_mapping(cls, values: Mapping[str, str], base_dir: Path | None = None) -> "RunConfig":
        base = base_dir or Path(".")

        def path(v: str) -> Path:
            p = Path(v).expanduser()
            return p if p.is_absolute() else base / p

        cfg = cls()
        try:
            for key, value in values.items():
                if key.startswith(THRESHOLD_PREFIX):
                    cfg.driver_thresholds[key[len(THRESHOLD_PREFIX):]] = float(value)
                elif key == "corpus":
                    cfg.corpus_paths = [path(v) for v in _split_list(value)]
                elif key in ("field_map", "drivers_dir", "out_dir", "rules", "skills_file", "base_graph"):
                    setattr(cfg, key, path(value) if value else None)
                elif key in ("dimension", "max_tokens", "parallelism", "batch_size", "top_k"):
                    setattr(cfg, key, int(value))
                elif key in ("threshold", "max_failure_fraction"):
                    setattr(cfg, key, float(value))
                elif key == "filter_locations":
                    cfg.filter_locations = _split_list(value)
                elif key in ("corpus_format", "provider", "endpoint", "model", "run_id",
                             "organisation", "date_from", "date_to"):
                    setattr(cfg, key, value or None if key != "provider" else value)
                else:
                    raise ConfigError(f"unknown config key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc
        return cfg

    @classmethod
    def load(cls, path: os.PathLike | str) -> "RunConfig":
        p = Path(path)
        return cls.from_mapping(read_key_values(p), base_dir=p.parent)
