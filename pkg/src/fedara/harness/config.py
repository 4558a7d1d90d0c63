"""Experiment configuration: schema, validation, YAML loading, grid expansion.

Config files are YAML.  Schema (version 1)::

    schema_version: 1
    name: purchase-batch
    dataset: {kind: synth_purchase, n: 3000, d: 30, classes: 10,
              marginal: 0.5, label_noise: 0.5}     # or kind: csv/genome + path
    column: 3                  # sensitive attribute column
    victim_size: 50
    fed: {participants: 1, isolate: true, rounds: null, batch_size: full, lr: 0.01}
    hidden_dims: [128]
    attacks: [cos, l2, stats, public100, public1000, random]
    windows: [pre1, pre2, pre5, gap10, last5]
    knowledge: {membership: known, prior: known, label: known}
    gamma: 1.0
    gamma_grid: null           # list -> objective-driven temperature search
    iterations: 2000
    repetitions: 3
    seed: 0
    grid: {fed.batch_size: [8, 32, full]}   # optional sweep axes

``rounds: null`` records just enough rounds for the requested windows.
"""

from __future__ import annotations

import copy
import itertools
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from ..errors import ConfigError
from ..fedsim import WINDOW_NAMES

SCHEMA_VERSION = 1
ATTACK_KINDS = ("cos", "l2", "stats", "public100", "public1000", "random")
DATASET_KINDS = ("synth_purchase", "synth_genome", "csv", "genome")
KNOWN = ("known", "unknown")


@dataclass
class DatasetSpec:
    kind: str = "synth_purchase"
    path: str | None = None
    n: int = 3000
    d: int = 30
    classes: int = 10
    marginal: float = 0.5
    label_noise: float = 0.5
    informative: list | None = None
    seed: int | None = None


@dataclass
class FedSpec:
    participants: int = 1
    isolate: bool = True
    rounds: int | None = None
    batch_size: int | str = "full"
    lr: float = 0.01


@dataclass
class Knowledge:
    membership: str = "known"
    prior: str = "known"
    label: str = "known"


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    column: int = 0
    victim_size: int = 50
    fed: FedSpec = field(default_factory=FedSpec)
    hidden_dims: list = field(default_factory=lambda: [128])
    attacks: list = field(default_factory=lambda: ["cos"])
    windows: list = field(default_factory=lambda: ["pre5"])
    knowledge: Knowledge = field(default_factory=Knowledge)
    gamma: float = 1.0
    gamma_grid: list | None = None
    iterations: int = 2000
    repetitions: int = 3
    seed: int = 0
    schema_version: int = SCHEMA_VERSION

    def validate(self):
        """Reject bad configs before any computation."""
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version}")
        if self.dataset.kind not in DATASET_KINDS:
            raise ConfigError(f"dataset.kind must be one of {DATASET_KINDS}")
        if self.dataset.kind in ("csv", "genome") and not self.dataset.path:
            raise ConfigError(f"dataset.kind={self.dataset.kind} needs dataset.path")
        for a in self.attacks:
            if a not in ATTACK_KINDS:
                raise ConfigError(f"unknown attack {a!r}; expected one of {ATTACK_KINDS}")
        if not self.attacks:
            raise ConfigError("no attacks requested")
        for w in self.windows:
            if w not in WINDOW_NAMES:
                raise ConfigError(f"unknown window {w!r}; expected one of {WINDOW_NAMES}")
        for flag in ("membership", "prior", "label"):
            if getattr(self.knowledge, flag) not in KNOWN:
                raise ConfigError(f"knowledge.{flag} must be 'known' or 'unknown'")
        if "stats" in self.attacks and self.knowledge.label != "known":
            raise ConfigError("the stats attack requires label=known")
        if self.knowledge.membership == "unknown" and self.knowledge.label != "known":
            raise ConfigError("membership inference features require label=known")
        if self.fed.participants < 1:
            raise ConfigError("fed.participants must be >= 1")
        if self.fed.rounds is not None and not 1 <= self.fed.rounds <= 100:
            raise ConfigError("fed.rounds must lie in [1, 100]")
        bs = self.fed.batch_size
        if not (bs == "full" or (isinstance(bs, int) and bs >= 1)):
            raise ConfigError("fed.batch_size must be a positive integer or 'full'")
        if self.victim_size < 1 or self.repetitions < 1 or self.iterations < 1:
            raise ConfigError("victim_size, repetitions and iterations must be >= 1")
        if self.gamma <= 0 or any(g <= 0 for g in (self.gamma_grid or [])):
            raise ConfigError("gamma values must be positive")
        if any(int(h) < 1 for h in self.hidden_dims):
            raise ConfigError("hidden_dims must be positive")
        return self

    def to_dict(self):
        return asdict(self)


def from_dict(raw):
    """Build and validate a config from a plain mapping."""
    raw = dict(raw or {})
    raw.pop("grid", None)
    try:
        cfg = ExperimentConfig(
            **{
                **{k: v for k, v in raw.items() if k not in ("dataset", "fed", "knowledge")},
                "dataset": DatasetSpec(**raw.get("dataset", {})),
                "fed": FedSpec(**raw.get("fed", {})),
                "knowledge": Knowledge(**raw.get("knowledge", {})),
            }
        )
    except TypeError as exc:
        raise ConfigError(f"invalid config field: {exc}") from None
    cfg.hidden_dims = list(cfg.hidden_dims)
    return cfg.validate()


def _set_path(mapping, dotted, value):
    keys = dotted.split(".")
    node = mapping
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value


def expand_grid(raw):
    """One validated config per point of the optional ``grid`` mapping."""
    raw = dict(raw or {})
    grid = raw.pop("grid", None) or {}
    if not grid:
        return [from_dict(raw)]
    axes = list(grid)
    configs = []
    for values in itertools.product(*(grid[a] for a in axes)):
        point = copy.deepcopy(raw)
        suffix = []
        for axis, value in zip(axes, values):
            _set_path(point, axis, value)
            label = "x".join(map(str, value)) if isinstance(value, list) else str(value)
            suffix.append(f"{axis.split('.')[-1]}={label}")
        point["name"] = f"{raw.get('name', 'experiment')}[{','.join(suffix)}]"
        configs.append(from_dict(point))
    return configs


def load_config_file(path):
    """Parse a YAML config file into a list of configs (grid-expanded)."""
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return expand_grid(raw)
