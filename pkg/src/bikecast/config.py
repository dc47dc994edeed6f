"""Run configuration: a flat YAML key/value file, every key overridable by flag."""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from .errors import ConfigInvalid
from .features import MAX_MEMORY
from .ingest import TICK_SECONDS
from .learners import KINDS, HyperParams

DATA_DIR_ENV = "BIKECAST_DATA_DIR"
DATA_FILES = {"status": "status.csv", "trip": "trip.csv", "weather": "weather.csv", "station": "station.csv"}
CV_MODES = ("random", "blocked")


@dataclass(frozen=True)
class RunConfig:
    data_dir: str | None = None
    status_path: str | None = None
    trip_path: str | None = None
    weather_path: str | None = None
    station_path: str | None = None
    tick_seconds: int = TICK_SECONDS
    max_gap: int = 3600
    min_coverage: float = 0.9
    start: str | None = None
    end: str | None = None
    stations: list[int] | None = None
    neighbor_k: int = 10
    region_edge_weight: float = 20.0
    horizon: int = 15
    memory: int = 0
    use_weather: bool = True
    min_rows: int = 10
    kind: str = "forest"
    n_trees: int = 140
    mtry: int | None = None
    max_depth: int | None = None
    min_samples_leaf: int = 5
    shrinkage: float = 0.1
    n_components: int | None = None
    bootstrap: bool = True
    seed: int = 0
    cv_mode: str = "random"
    cv_folds: int = 5
    tree_curves: list[int] | None = field(default_factory=lambda: [20, 60, 100, 140, 180])
    out: str = "runs/default"
    jobs: int = 1

    def __post_init__(self):
        def bad(key, why):
            raise ConfigInvalid(f"{key}: {why} (got {getattr(self, key)!r})")

        for key in ("tick_seconds", "max_gap", "neighbor_k", "horizon", "min_rows", "n_trees", "min_samples_leaf", "jobs"):
            if getattr(self, key) < 1:
                bad(key, "must be a positive integer")
        for key in ("mtry", "max_depth", "n_components"):
            v = getattr(self, key)
            if v is not None and v < 1:
                bad(key, "must be a positive integer or null")
        if not 0.0 <= self.min_coverage <= 1.0:
            bad("min_coverage", "must lie in [0, 1]")
        if self.region_edge_weight < 0:
            bad("region_edge_weight", "must be non-negative")
        if not 0 <= self.memory <= MAX_MEMORY:
            bad("memory", f"must lie in 0..{MAX_MEMORY}")
        if (self.horizon * 60) % self.tick_seconds:
            bad("horizon", f"must be a multiple of the {self.tick_seconds} s tick")
        if self.kind not in KINDS:
            bad("kind", f"must be one of {KINDS}")
        if not 0.0 < self.shrinkage <= 1.0:
            bad("shrinkage", "must lie in (0, 1]")
        if self.cv_mode not in CV_MODES:
            bad("cv_mode", f"must be one of {CV_MODES}")
        if self.cv_folds < 2:
            bad("cv_folds", "must be at least 2")
        if self.stations is not None and not self.stations:
            bad("stations", "must be null or a non-empty list")

    @property
    def params(self) -> HyperParams:
        return HyperParams(
            kind=self.kind,
            n_trees=self.n_trees,
            mtry=self.mtry,
            max_depth=self.max_depth,
            min_samples_leaf=self.min_samples_leaf,
            shrinkage=self.shrinkage,
            n_components=self.n_components,
            bootstrap=self.bootstrap,
            seed=self.seed,
        )

    def data_path(self, name: str) -> Path:
        """Explicit ``<name>_path``, else ``<data_dir>/<name>.csv``; the data
        directory falls back to the ``BIKECAST_DATA_DIR`` environment variable."""
        explicit = getattr(self, f"{name}_path")
        if explicit:
            return Path(explicit)
        base = self.data_dir or os.environ.get(DATA_DIR_ENV)
        if not base:
            raise ConfigInvalid(f"{name}_path: not set, and neither data_dir nor ${DATA_DIR_ENV} is given")
        return Path(base) / DATA_FILES[name]

    def require_inputs(self, names) -> dict[str, Path]:
        paths = {}
        for name in names:
            path = self.data_path(name)
            if not path.is_file():
                raise ConfigInvalid(f"{name}_path: {path} does not exist")
            paths[name] = path
        return paths

    def with_(self, **changes) -> "RunConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def coerce(key: str, value):
    """Convert a YAML or command-line value to the type declared for ``key``."""
    if key not in _TYPES:
        raise ConfigInvalid(f"unknown key {key!r}")
    kind = _TYPES[key]
    optional = "None" in kind
    if value is None or (isinstance(value, str) and value.lower() in ("null", "none", "")):
        if optional:
            return None
        raise ConfigInvalid(f"{key}: may not be null")
    try:
        if kind.startswith("list"):
            if isinstance(value, str):
                value = [v for v in value.replace(" ", "").split(",") if v]
            if not isinstance(value, (list, tuple)):
                value = [value]
            return [int(v) for v in value]
        if kind.startswith("bool"):
            if isinstance(value, bool):
                return value
            text = str(value).lower()
            if text in ("1", "true", "yes", "on"):
                return True
            if text in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if kind.startswith("int"):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if kind.startswith("float"):
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigInvalid(f"{key}: cannot read {value!r} as {kind}") from None


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read ``path`` (if given), apply ``overrides`` and validate."""
    values: dict = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigInvalid(f"config file {path} does not exist")
        try:
            doc = yaml.safe_load(path.read_text())
        except yaml.YAMLError as exc:
            raise ConfigInvalid(f"{path}: {exc}") from None
        if doc is None:
            doc = {}
        if not isinstance(doc, dict):
            raise ConfigInvalid(f"{path}: expected a flat key/value mapping")
        for key, value in doc.items():
            if isinstance(value, dict):
                raise ConfigInvalid(f"{path}: key {key!r} is nested; the file must be flat")
            values[key] = coerce(str(key), value)
    for key, value in (overrides or {}).items():
        values[key] = coerce(key, value)
    return RunConfig(**values)


def dump_config(config: RunConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(config.to_dict(), sort_keys=False))
