"""FedAvg simulation with a curious server that records the victim's updates."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import nnmodel
from .errors import DivergenceError
from .nnmodel import MlpConfig, ParamVector

MANIFEST_NAME = "manifest.json"
STORE_FORMAT_VERSION = 1

WINDOW_NAMES = ("pre1", "pre2", "pre5", "gap10", "last5")


@dataclass(frozen=True)
class FedConfig:
    participants: int = 1
    isolate: bool = True
    rounds: int = 100
    batch_size: int | None = None  # None = full local data
    lr: float = 0.01
    seed: int = 0
    local_epochs: int = 1

    def __post_init__(self):
        if self.participants < 1:
            raise ValueError("need at least one participant")
        if not 1 <= self.rounds <= 100:
            raise ValueError("rounds must lie in [1, 100]")
        if self.local_epochs != 1:
            raise ValueError("exactly one local epoch per round is supported")


@dataclass
class GradientSnapshot:
    round: int
    start: np.ndarray  # flat params the victim started the round with
    delta: np.ndarray  # start - end of the victim's local epoch
    end: np.ndarray | None = None

    def gradient(self, lr):
        return self.delta / lr


@dataclass
class SnapshotStore:
    """Append-only per-round record of the victim's models and updates."""

    model: MlpConfig
    lr: float
    snapshots: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def append(self, snap):
        if self.snapshots and snap.round <= self.snapshots[-1].round:
            raise ValueError("snapshot rounds must be strictly increasing")
        if snap.delta.shape != (self.model.num_params,):
            raise ValueError("snapshot delta has the wrong length")
        self.snapshots.append(snap)

    def __len__(self):
        return len(self.snapshots)

    @property
    def rounds(self):
        return [s.round for s in self.snapshots]

    def get(self, t):
        for s in self.snapshots:
            if s.round == t:
                return s
        raise KeyError(f"round {t} not recorded")

    def select(self, rounds):
        return [self.get(t) for t in rounds]

    def pairs(self, rounds):
        """(start params, observed gradient) for each requested round."""
        return [(s.start, s.gradient(self.lr)) for s in self.select(rounds)]

    # -- persistence ------------------------------------------------------

    def save(self, directory):
        """Write one checkpoint per round and a JSON manifest."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        entries = []
        for s in self.snapshots:
            for kind, vec in (("start", s.start), ("delta", s.delta)):
                name = f"round{s.round:03d}_{kind}.ckpt"
                nnmodel.save_checkpoint(directory / name, self.model, vec, epoch=s.round)
                digest = hashlib.sha256((directory / name).read_bytes()).hexdigest()
                entries.append({"round": s.round, "kind": kind, "file": name, "sha256": digest})
        manifest = {
            "format_version": STORE_FORMAT_VERSION,
            "model": {
                "input_dim": self.model.input_dim,
                "num_classes": self.model.num_classes,
                "hidden_dims": list(self.model.hidden_dims),
                "seed": self.model.seed,
            },
            "lr": self.lr,
            "meta": self.meta,
            "checkpoints": entries,
        }
        (directory / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2))

    @classmethod
    def load(cls, directory, verify=True):
        directory = Path(directory)
        manifest = json.loads((directory / MANIFEST_NAME).read_text())
        if manifest.get("format_version") != STORE_FORMAT_VERSION:
            raise ValueError(f"unsupported snapshot store version {manifest.get('format_version')}")
        m = manifest["model"]
        cfg = MlpConfig(m["input_dim"], m["num_classes"], tuple(m["hidden_dims"]), m["seed"])
        parts = {}
        for e in manifest["checkpoints"]:
            path = directory / e["file"]
            if verify and hashlib.sha256(path.read_bytes()).hexdigest() != e["sha256"]:
                raise ValueError(f"checksum mismatch for {e['file']}")
            _, flat, _ = nnmodel.load_checkpoint(path)
            parts.setdefault(e["round"], {})[e["kind"]] = flat
        store = cls(cfg, manifest["lr"], meta=manifest.get("meta", {}))
        for t in sorted(parts):
            p = parts[t]
            store.append(GradientSnapshot(t, p["start"], p["delta"], p["start"] - p["delta"]))
        return store


def fedavg(models, weights):
    """Weighted average of flat parameter vectors.

    Weighted terms are summed in sorted order per coordinate, which makes the
    result bitwise independent of participant order.
    """
    weights = np.asarray(weights, dtype=np.float64)
    weights = weights / weights.sum()
    terms = np.stack([w * m for w, m in zip(weights, models)])
    return np.sort(terms, axis=0).sum(axis=0)


def _participant_rng(seed, p, t):
    return np.random.default_rng([seed, p, t])


def run_federation(cfg, participants, victim_index=0, model=None, init=None):
    """Simulate FedAvg for ``cfg.rounds`` rounds, snapshotting the victim.

    ``participants`` is a list of :class:`~fedara.dataio.Dataset`.  Returns
    ``(store, final_global_flat)``.  With ``cfg.isolate`` the victim trains
    only on its own previous model and is left out of the aggregate.
    """
    if not participants:
        raise ValueError("participants must be non-empty")
    if not 0 <= victim_index < len(participants):
        raise ValueError(f"victim_index {victim_index} out of range")
    if len(participants) != cfg.participants:
        raise ValueError(f"config says {cfg.participants} participants, got {len(participants)}")
    if model is None:
        first = participants[0]
        model = MlpConfig(first.width, first.num_classes, (128,), cfg.seed)
    global_flat = (init if init is not None else nnmodel.init_params(model)).flat()
    victim_flat = global_flat.copy()
    store = SnapshotStore(model, cfg.lr)

    for t in range(1, cfg.rounds + 1):
        ends, sizes = [], []
        for p, data in enumerate(participants):
            isolated_victim = cfg.isolate and p == victim_index
            start = victim_flat if isolated_victim else global_flat
            try:
                end, _ = nnmodel.local_epoch(
                    ParamVector.from_flat(model, start),
                    data.X,
                    data.Y,
                    lr=cfg.lr,
                    batch_size=cfg.batch_size,
                    rng=_participant_rng(cfg.seed, p, t),
                )
            except FloatingPointError as exc:
                raise DivergenceError(f"participant {p}: {exc}", f"round {t}") from exc
            end = end.flat()
            if not np.isfinite(end).all():
                raise DivergenceError("non-finite parameters", f"round {t}")
            if p == victim_index:
                store.append(GradientSnapshot(t, start.copy(), start - end, end))
                victim_flat = end
            if not isolated_victim:
                ends.append(end)
                sizes.append(len(data))
        if ends:
            global_flat = fedavg(ends, sizes)
    final = victim_flat if cfg.isolate and len(participants) == 1 else global_flat
    return store, final


@dataclass
class EpochWindow:
    name: str
    rounds: list


def resolve_window(store, name):
    """Resolve a window name against the recorded rounds."""
    recorded = store.rounds if isinstance(store, SnapshotStore) else list(store)
    if name == "pre1":
        rounds = [1]
    elif name == "pre2":
        rounds = [1, 2]
    elif name == "pre5":
        rounds = [1, 2, 3, 4, 5]
    elif name == "gap10":
        rounds = [10, 20, 30, 40, 50]
    elif name == "last5":
        if len(recorded) < 5:
            raise ValueError(f"window last5 needs 5 rounds, store has {len(recorded)}")
        rounds = sorted(recorded)[-5:]
    elif name == "all":
        rounds = sorted(recorded)
    else:
        raise ValueError(f"unknown window {name!r}; expected one of {WINDOW_NAMES}")
    missing = sorted(set(rounds) - set(recorded))
    if missing:
        raise ValueError(f"window {name} needs rounds {missing} not present in the store")
    return EpochWindow(name, rounds)


def rounds_needed(window_names, total=100):
    """Smallest number of rounds that makes every window resolvable."""
    need = 1
    for w in window_names:
        need = max(need, {"pre1": 1, "pre2": 2, "pre5": 5, "gap10": 50}.get(w, total))
    return need


def config_dict(cfg):
    return asdict(cfg)
