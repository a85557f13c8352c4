"""TOML configuration with command-line overrides.

Example::

    [schema]
    paths = ["data/tables.json"]

    [dataset]
    spider_train = ["data/train_spider.json"]
    spider_dev = "data/dev.json"
    custom = "data/utility.jsonl"
    db_id = "utility"

    [backend]
    kind = "http"
    endpoint = "http://localhost:8080"

    [repair]
    enabled = true
    threshold = 2

    [evaluate]
    db_dir = "data/database"

Relative paths are resolved against the directory holding the config file.
Unknown sections or keys are an error, so a typo never silently falls back
to a default.
"""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .backend import DEFAULT_TIMEOUT
from .dataset import DEFAULT_MIN_COVERAGE
from .evaluate import DEFAULT_STATEMENT_TIMEOUT
from .repair import DEFAULT_THRESHOLD

ENDPOINT_ENV = "NL2SQL_ENDPOINT"
BACKEND_KINDS = ("http", "replay", "baseline")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SchemaConfig:
    paths: tuple[str, ...] = ()


@dataclass(frozen=True)
class DatasetConfig:
    spider_train: tuple[str, ...] = ()
    spider_dev: Optional[str] = None
    custom: Optional[str] = None
    db_id: Optional[str] = None


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "baseline"
    endpoint: Optional[str] = None
    predictions: Optional[str] = None
    timeout: float = DEFAULT_TIMEOUT


@dataclass(frozen=True)
class RepairConfig:
    enabled: bool = False
    threshold: int = DEFAULT_THRESHOLD
    qualifiers: bool = False


@dataclass(frozen=True)
class PromptConfig:
    schema: bool = True


@dataclass(frozen=True)
class EvaluateConfig:
    db_dir: Optional[str] = None
    timeout: float = DEFAULT_STATEMENT_TIMEOUT
    parallelism: int = 4
    drop_values: bool = False
    report: Optional[str] = None


@dataclass(frozen=True)
class CoverageConfig:
    min_coverage: int = DEFAULT_MIN_COVERAGE


@dataclass(frozen=True)
class Config:
    schema: SchemaConfig = field(default_factory=SchemaConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    backend: BackendConfig = field(default_factory=BackendConfig)
    repair: RepairConfig = field(default_factory=RepairConfig)
    prompt: PromptConfig = field(default_factory=PromptConfig)
    evaluate: EvaluateConfig = field(default_factory=EvaluateConfig)
    coverage: CoverageConfig = field(default_factory=CoverageConfig)

    def validate(self) -> "Config":
        if self.backend.kind not in BACKEND_KINDS:
            raise ConfigError(f"backend.kind must be one of {', '.join(BACKEND_KINDS)}")
        if self.repair.threshold < 0:
            raise ConfigError("repair.threshold must be >= 0")
        if self.evaluate.parallelism < 1:
            raise ConfigError("evaluate.parallelism must be >= 1")
        if self.evaluate.timeout <= 0 or self.backend.timeout <= 0:
            raise ConfigError("timeouts must be positive")
        if self.coverage.min_coverage < 0:
            raise ConfigError("coverage.min_coverage must be >= 0")
        return self

    def endpoint(self) -> Optional[str]:
        return self.backend.endpoint or os.environ.get(ENDPOINT_ENV) or None


_PATH_KEYS = {
    ("schema", "paths"), ("dataset", "spider_train"), ("dataset", "spider_dev"),
    ("dataset", "custom"), ("backend", "predictions"), ("evaluate", "db_dir"),
    ("evaluate", "report"),
}


def _coerce(section: str, key: str, value: Any, default: Any, base: Path) -> Any:
    where = f"{section}.{key}"
    if isinstance(default, tuple):
        if isinstance(value, str):
            value = [value]
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise ConfigError(f"{where} must be a list of strings")
        if (section, key) in _PATH_KEYS:
            value = [str(base / v) for v in value]
        return tuple(value)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be true or false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{where} must be a string")
    return str(base / value) if (section, key) in _PATH_KEYS else value


def config_from_mapping(data: Mapping[str, Any], base: Path = Path(".")) -> Config:
    sections = {f.name: f.default_factory() for f in fields(Config)}
    for name, table in data.items():
        if name not in sections:
            raise ConfigError(f"unknown config section [{name}]")
        if not isinstance(table, dict):
            raise ConfigError(f"[{name}] must be a table")
        current = sections[name]
        known = {f.name for f in fields(current)}
        updates = {}
        for key, value in table.items():
            if key not in known:
                raise ConfigError(f"unknown config key {name}.{key}")
            updates[key] = _coerce(name, key, value, getattr(current, key), base)
        sections[name] = replace(current, **updates)
    return Config(**sections).validate()


def load_config(path: Optional[str | Path]) -> Config:
    if path is None:
        return Config()
    path = Path(path)
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_mapping(data, path.parent)


def with_overrides(config: Config, overrides: Mapping[str, Any]) -> Config:
    """Apply ``{"section.key": value}`` overrides; ``None`` values are skipped."""
    grouped: dict[str, dict[str, Any]] = {}
    for dotted, value in overrides.items():
        if value is None:
            continue
        section, key = dotted.split(".", 1)
        grouped.setdefault(section, {})[key] = value
    out = config
    for section, updates in grouped.items():
        current = getattr(out, section)
        for key in updates:
            if key not in {f.name for f in fields(current)}:
                raise ConfigError(f"unknown config key {section}.{key}")
            if isinstance(getattr(current, key), tuple):
                updates[key] = tuple(updates[key])
        out = replace(out, **{section: replace(current, **updates)})
    return out.validate()
