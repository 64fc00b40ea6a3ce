"""Experiment configuration: one JSON file, strict about keys.

Every section is a dataclass; ``load`` rejects unknown keys anywhere and
``dump`` writes a file that ``load`` reads back to an equal Config.
Dotted overrides (``scenario.noise_sigma=0.1``) map one-to-one onto keys.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, List, Optional, Tuple, Union

import numpy as np

from .dataset import GroundTruth, gavel_like_table, generate_synthetic, load_table
from .domain import AcceleratorType
from .optimizer import Server
from .regressor import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class DatasetConfig:
    source: str = "synthetic"  # synthetic | gavel-like | table
    path: Optional[str] = None
    n_acc: int = 3
    n_families: int = 4
    batches_per_family: int = 5
    interference: float = 0.3
    table_seed: int = 7
    capacity: int = 2

    def validate(self) -> None:
        if self.source not in ("synthetic", "gavel-like", "table"):
            raise ConfigError(f"dataset.source must be synthetic, gavel-like or table, got {self.source!r}")
        if self.source == "table" and not self.path:
            raise ConfigError("dataset.path is required when dataset.source is 'table'")


@dataclass
class AcceleratorConfig:
    id: str
    capacity: Optional[int] = None
    power_idle: Optional[float] = None
    power_per_unit_load: Optional[float] = None


@dataclass
class ClusterConfig:
    servers: int = 4
    accelerator_types: Optional[List[str]] = None  # None: every type in the dataset
    accelerators: List[AcceleratorConfig] = field(default_factory=list)  # per-type overrides

    def validate(self) -> None:
        if self.servers < 1:
            raise ConfigError("cluster.servers must be >= 1")


@dataclass
class ModelConfig:
    hidden: List[int] = field(default_factory=lambda: [64, 64])
    lr: float = 0.05
    epochs: int = 400
    batch_size: int = 32
    patience: int = 40
    p2_noise_sigma: float = 0.1
    val_frac: float = 0.15
    test_frac: float = 0.15
    neighbors: int = 3

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(lr=self.lr, epochs=self.epochs, batch_size=self.batch_size,
                           patience=self.patience, seed=seed)

    def validate(self) -> None:
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ConfigError("model.hidden must list positive layer widths")
        if self.lr <= 0 or self.epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ConfigError("model lr, epochs, batch_size and patience must be positive")


@dataclass
class ScenarioConfig:
    estimator: str = "learned"  # learned | p1-only | copy | oracle
    arrivals: Union[int, List[str]] = 10
    bootstrap: Union[None, int, List[str]] = None  # None: every job that does not arrive
    noise_sigma: float = 0.0
    rounds: Optional[int] = None
    sla_fraction: float = 0.5
    distributability: int = 1
    time_limit: float = 60.0
    p1_path: Optional[str] = None
    p2_path: Optional[str] = None

    def validate(self) -> None:
        if self.noise_sigma < 0:
            raise ConfigError("scenario.noise_sigma must be >= 0")
        if not 0 <= self.sla_fraction:
            raise ConfigError("scenario.sla_fraction must be >= 0")


@dataclass
class Config:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    seed: int = 0
    out: str = "out"

    def validate(self) -> "Config":
        for part in (self.dataset, self.cluster, self.model, self.scenario):
            part.validate()
        return self


# ------------------------------------------------------------------ (de)serialization

_NESTED = {"dataset": DatasetConfig, "cluster": ClusterConfig, "model": ModelConfig,
           "scenario": ScenarioConfig}


def _build(cls, data: Any, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'config'}: {', '.join(unknown)}")
    kwargs = {}
    for k, v in data.items():
        path = f"{where}.{k}" if where else k
        if cls is Config and k in _NESTED:
            kwargs[k] = _build(_NESTED[k], v, path)
        elif cls is ClusterConfig and k == "accelerators":
            if not isinstance(v, list):
                raise ConfigError(f"{path} must be a list")
            kwargs[k] = [_build(AcceleratorConfig, a, f"{path}[{i}]") for i, a in enumerate(v)]
        else:
            kwargs[k] = v
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from exc


def from_dict(data: dict) -> Config:
    return _build(Config, data, "").validate()


def to_dict(cfg: Config) -> dict:
    return dataclasses.asdict(cfg)


def load(path) -> Config:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from exc
    return from_dict(data)


def dump(cfg: Config, path) -> None:
    Path(path).write_text(json.dumps(to_dict(cfg), indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def override(cfg: Config, assignment: str) -> Config:
    """Apply ``section.key=value``; the value is parsed as JSON, falling back to a string."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    key, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    data = to_dict(cfg)
    node = data
    parts = key.split(".")
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            raise ConfigError(f"unknown config key {key!r}")
        node = node[p]
    if parts[-1] not in node:
        raise ConfigError(f"unknown config key {key!r}")
    node[parts[-1]] = value
    return from_dict(data)


# ------------------------------------------------------------------ materialization

def ground_truth(cfg: Config) -> GroundTruth:
    d = cfg.dataset
    if d.source == "table":
        gt = load_table(d.path, capacity=d.capacity)
    elif d.source == "gavel-like":
        gt = gavel_like_table(seed=d.table_seed, interference=d.interference)
    else:
        gt = generate_synthetic(d.n_acc, d.n_families, d.batches_per_family, d.interference,
                                d.table_seed, capacity=d.capacity)
    return _apply_cluster(cfg, gt)


def _apply_cluster(cfg: Config, gt: GroundTruth) -> GroundTruth:
    by_id = {a.acc_id: a for a in gt.accelerators}
    overrides = {o.id: o for o in cfg.cluster.accelerators}
    unknown = sorted(set(overrides) - set(by_id))
    if unknown:
        raise ConfigError(f"cluster.accelerators names unknown types: {', '.join(unknown)}")
    if not overrides:
        return gt
    accs = []
    for a in gt.accelerators:
        o = overrides.get(a.acc_id)
        if o is None:
            accs.append(a)
            continue
        accs.append(AcceleratorType(
            a.acc_id, a.name,
            a.capacity if o.capacity is None else o.capacity,
            a.power_idle if o.power_idle is None else o.power_idle,
            a.power_per_unit_load if o.power_per_unit_load is None else o.power_per_unit_load))
    return gt.with_accelerators(accs)


def servers(cfg: Config, gt: GroundTruth) -> Tuple[Server, ...]:
    types = cfg.cluster.accelerator_types
    if types is None:
        types = list(gt.acc_ids)
    unknown = sorted(set(types) - set(gt.acc_ids))
    if unknown:
        raise ConfigError(f"cluster.accelerator_types names unknown types: {', '.join(unknown)}")
    return tuple(Server(f"s{i}", tuple(types)) for i in range(cfg.cluster.servers))


def arrivals_and_bootstrap(cfg: Config, gt: GroundTruth) -> Tuple[List[str], List[str]]:
    """Seeded split of job ids into the arrival sequence and the bootstrap set."""
    sc = cfg.scenario
    ids = sorted(gt.job_ids)
    rng = np.random.default_rng(cfg.seed)
    shuffled = [ids[i] for i in rng.permutation(len(ids))]
    if isinstance(sc.arrivals, int):
        if not 0 <= sc.arrivals <= len(ids):
            raise ConfigError(f"scenario.arrivals={sc.arrivals} but the dataset has {len(ids)} jobs")
        arrivals = shuffled[:sc.arrivals]
    else:
        arrivals = list(sc.arrivals)
    rest = [j for j in shuffled if j not in set(arrivals)]
    if sc.bootstrap is None:
        boot = rest
    elif isinstance(sc.bootstrap, int):
        if not 0 <= sc.bootstrap <= len(rest):
            raise ConfigError(f"scenario.bootstrap={sc.bootstrap} but only {len(rest)} jobs remain")
        boot = rest[:sc.bootstrap]
    else:
        boot = list(sc.bootstrap)
    return arrivals, sorted(boot)

