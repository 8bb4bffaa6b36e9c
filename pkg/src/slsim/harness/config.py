"""Experiment configuration: nested dataclasses mirrored one-to-one by JSON.

Unknown keys are rejected so a typo never silently falls back to a default.
"""

from __future__ import annotations

import copy
import dataclasses
import json
import typing
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional

from slsim.attacks import ATTACKS
from slsim.baselines import BASELINES
from slsim.defense.filtering import VARIANTS
from slsim.defense.reduction import REDUCERS
from slsim.errors import ConfigError
from slsim.split import AGGREGATION_MODES

DEFENSES = ("none", "securesplit") + BASELINES


@dataclass
class DatasetConfig:
    source: str = "synthetic"  # "mnist_idx" or "synthetic"
    path: Optional[str] = None
    n_train: Optional[int] = None  # truncate the loaded split
    n_test: Optional[int] = None
    # synthetic blobs
    n_classes: int = 2
    dim: int = 20
    separation: float = 5.0
    synthetic_train: int = 400
    synthetic_test: int = 200


@dataclass
class AttackConfig:
    kind: str = "none"
    magnitude: float = 4.0
    rate: float = 0.01
    target: int = 0
    source: int = 1  # BadVFL source class
    start_round: int = 80
    aux_fraction: float = 0.2
    trigger_fraction: float = 0.5  # VILLAIN: share of embedding dims carrying the trigger
    patch_size: int = 4  # BadVFL
    tolerance: float = 0.25  # adaptive bisection width


@dataclass
class DefenseConfig:
    kind: str = "none"
    alpha: float = 1.5
    variant: str = "full"
    reduced_dim: int = 2
    reducer: str = "neighbor_graph"
    n_neighbors: int = 15
    layout_epochs: int = 200
    max_degree: int = 12
    k_trim: Optional[int] = None
    f: Optional[int] = None
    c: Optional[int] = None
    noise_std: float = 0.1
    prune_fraction: float = 0.1


@dataclass
class MetricsConfig:
    separation_pairs: int = 100
    separation_round: Optional[int] = None  # default: last poisoned round


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    n_clients: int = 4
    malicious: List[int] = field(default_factory=lambda: [0])
    rho: float = 0.0
    aggregation: str = "concatenate"
    embedding_dim: int = 16
    bottom_hidden: List[int] = field(default_factory=lambda: [64, 32])
    top_hidden: List[int] = field(default_factory=lambda: [64])
    init_gain: float = 1.0
    lr: float = 1e-3
    batch_size: int = 512
    rounds: int = 120
    attack: AttackConfig = field(default_factory=AttackConfig)
    defense: DefenseConfig = field(default_factory=DefenseConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    seed: int = 0

    def validate(self) -> "ExperimentConfig":
        def bad(name, why):
            raise ConfigError(f"{name}: {why}")

        if self.dataset.source not in ("mnist_idx", "synthetic"):
            bad("dataset.source", f"unknown source {self.dataset.source!r}")
        if self.dataset.source == "mnist_idx" and not self.dataset.path:
            bad("dataset.path", "required for mnist_idx")
        if self.n_clients < 1:
            bad("n_clients", "must be >= 1")
        if any(not 0 <= i < self.n_clients for i in self.malicious) or len(set(self.malicious)) != len(self.malicious):
            bad("malicious", f"ids must be distinct and in [0, {self.n_clients})")
        if not 0.0 <= self.rho <= 1.0:
            bad("rho", "must lie in [0, 1]")
        if self.aggregation not in AGGREGATION_MODES:
            bad("aggregation", f"must be one of {AGGREGATION_MODES}")
        if self.embedding_dim < 1 or any(h < 1 for h in self.bottom_hidden + self.top_hidden):
            bad("embedding_dim", "layer widths must be positive")
        if self.init_gain <= 0:
            bad("init_gain", "must be positive")
        if self.lr < 0:
            bad("lr", "must be non-negative")
        if self.batch_size < 2:
            bad("batch_size", "must be >= 2")
        if self.rounds < 0:
            bad("rounds", "must be >= 0")
        a = self.attack
        if a.kind not in ATTACKS:
            bad("attack.kind", f"must be one of {ATTACKS}")
        if a.kind != "none":
            if not self.malicious:
                bad("malicious", "an attack needs at least one malicious client")
            if a.start_round < 1:
                bad("attack.start_round", "must be >= 1")
            if a.start_round > self.rounds:
                bad("attack.start_round", "must not exceed rounds")
            if not 0.0 < a.rate <= 1.0:
                bad("attack.rate", "must lie in (0, 1]")
            if a.magnitude < 0:
                bad("attack.magnitude", "must be non-negative")
            if not 0.0 < a.aux_fraction <= 1.0:
                bad("attack.aux_fraction", "must lie in (0, 1]")
            if a.kind == "adaptive" and (a.magnitude <= 0 or a.tolerance <= 0):
                bad("attack.tolerance", "adaptive search needs positive magnitude and tolerance")
        d = self.defense
        if d.kind not in DEFENSES:
            bad("defense.kind", f"must be one of {DEFENSES}")
        if d.variant not in VARIANTS:
            bad("defense.variant", f"must be one of {tuple(VARIANTS)}")
        if d.reducer not in REDUCERS:
            bad("defense.reducer", f"must be one of {REDUCERS}")
        if d.alpha <= 0:
            bad("defense.alpha", "must be positive")
        if d.reduced_dim < 1 or d.n_neighbors < 2:
            bad("defense.reduced_dim", "reduced_dim >= 1 and n_neighbors >= 2 required")
        if not 0.0 <= d.prune_fraction < 1.0:
            bad("defense.prune_fraction", "must lie in [0, 1)")
        return self

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


def _build(cls, data: Dict[str, Any], prefix: str = ""):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or 'config'}: expected an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{prefix or 'config'}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for key, value in data.items():
        hint = hints[key]
        if dataclasses.is_dataclass(hint):
            kwargs[key] = _build(hint, value, f"{prefix}{key}.")
        else:
            kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(data: Dict[str, Any]) -> ExperimentConfig:
    try:
        cfg = _build(ExperimentConfig, data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg.validate()


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    cfg = config_from_dict(data)
    ds = cfg.dataset
    if ds.path is not None and not Path(ds.path).is_absolute():
        # dataset paths in a config file are relative to that file
        cfg = replace(cfg, dataset=replace(ds, path=str((Path(path).parent / ds.path).resolve())))
    return cfg


def dump_config(cfg: ExperimentConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True)


def with_override(cfg: ExperimentConfig, dotted: str, value) -> ExperimentConfig:
    """Copy of ``cfg`` with one dotted field replaced, revalidated."""
    data = copy.deepcopy(cfg.to_dict())
    node = data
    *parents, leaf = dotted.split(".")
    for part in parents:
        if not isinstance(node.get(part), dict):
            raise ConfigError(f"{dotted}: no such section {part!r}")
        node = node[part]
    if leaf not in node:
        raise ConfigError(f"{dotted}: unknown key")
    node[leaf] = value
    return config_from_dict(data)
