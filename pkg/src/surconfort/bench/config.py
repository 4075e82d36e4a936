"""Experiment configuration: a single JSON document (or flag overrides)
describing the data source, methods, label-ratio sweep, folds, seeds, and
per-method hyperparameters."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from datetime import date as Date
from pathlib import Path

from ..diffusion import DiffusionConfig
from ..errors import ConfigError
from ..graphssl import NgmConfig
from ..nn import TrainConfig
from ..synthgen import SynthWorldConfig

METHODS = ("random", "mode", "snn", "lp", "ls", "lp-dssl", "surconfort", "ngm-natural")
DEFAULT_RATIOS = (0.10, 0.25, 0.50, 0.75, 1.00)


@dataclass(frozen=True)
class CsvDataConfig:
    stations: str
    edges: str
    reports: str
    holidays: str | None = None
    slots: int = 144

    @classmethod
    def from_dir(cls, directory: str | Path, slots: int = 144) -> "CsvDataConfig":
        d = Path(directory)
        holidays = d / "holidays.csv"
        return cls(stations=str(d / "stations.csv"), edges=str(d / "edges.csv"),
                   reports=str(d / "reports.csv"),
                   holidays=str(holidays) if holidays.exists() else None,
                   slots=slots)


@dataclass(frozen=True)
class ExperimentConfig:
    data: SynthWorldConfig | CsvDataConfig = field(default_factory=SynthWorldConfig)
    methods: tuple[str, ...] = ("surconfort", "snn")
    ratios: tuple[float, ...] = DEFAULT_RATIOS
    folds: int = 5
    seeds: tuple[int, ...] = (0,)
    out_dir: str = "results"
    jobs: int = 1
    d_max: float = 3.0
    graph: str = "rail"  # station adjacency flavor: rail | cosine
    ngm: NgmConfig = field(default_factory=NgmConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if not self.methods:
            raise ConfigError("methods list must be nonempty")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ConfigError(f"unknown methods {unknown}; valid: {list(METHODS)}")
        for r in self.ratios:
            if not 0.0 < r <= 1.0:
                raise ConfigError(f"label ratios must lie in (0, 1], got {r}")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if self.folds < 2:
            raise ConfigError(f"folds must be >= 2, got {self.folds}")
        if self.graph not in ("rail", "cosine"):
            raise ConfigError(f"graph must be 'rail' or 'cosine', got {self.graph!r}")
        if self.jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {self.jobs}")


def _build_dataclass(cls, payload: dict, context: str):
    field_names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(payload) - field_names
    if unknown:
        raise ConfigError(f"unknown {context} keys: {sorted(unknown)}")
    kwargs = dict(payload)
    if cls is SynthWorldConfig and isinstance(kwargs.get("start_date"), str):
        kwargs["start_date"] = Date.fromisoformat(kwargs["start_date"])
    if "dims" in kwargs and kwargs["dims"] is not None:
        kwargs["dims"] = tuple(kwargs["dims"])
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad {context} config: {exc}") from exc


def config_from_dict(payload: dict) -> ExperimentConfig:
    payload = dict(payload)
    data_spec = payload.pop("data", {"synthetic": {}})
    if "synthetic" in data_spec:
        data = _build_dataclass(SynthWorldConfig, data_spec["synthetic"], "synthetic data")
    elif "csv" in data_spec:
        data = _build_dataclass(CsvDataConfig, data_spec["csv"], "csv data")
    else:
        raise ConfigError("data block must contain 'synthetic' or 'csv'")
    ngm = _build_dataclass(NgmConfig, payload.pop("ngm", {}), "ngm")
    diffusion = _build_dataclass(DiffusionConfig, payload.pop("diffusion", {}), "diffusion")
    train = _build_dataclass(TrainConfig, payload.pop("train", {}), "train")

    for key in ("methods", "ratios", "seeds"):
        if key in payload:
            payload[key] = tuple(payload[key])
    field_names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(payload) - field_names
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return ExperimentConfig(data=data, ngm=ngm, diffusion=diffusion, train=train, **payload)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise ConfigError("config must be a JSON object")
    return config_from_dict(payload)


def config_to_dict(config: ExperimentConfig) -> dict:
    """JSON-ready mirror of the config (embedded in run metadata)."""
    def convert(obj):
        if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
            return convert(dataclasses.asdict(obj))
        if isinstance(obj, dict):
            return {k: convert(v) for k, v in obj.items()}
        if isinstance(obj, Date):
            return obj.isoformat()
        if isinstance(obj, (tuple, list)):
            return [convert(v) for v in obj]
        if isinstance(obj, frozenset):
            return sorted(convert(v) for v in obj)
        return obj

    out = {k: convert(v) for k, v in dataclasses.asdict(config).items()}
    kind = "synthetic" if isinstance(config.data, SynthWorldConfig) else "csv"
    out["data"] = {kind: out["data"]}
    return out
