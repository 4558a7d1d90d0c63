"""Run one configured experiment end to end and emit result rows."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .. import attacks, dataio, fedsim, mia
from ..nnmodel import MlpConfig
from .config import ExperimentConfig

log = logging.getLogger(__name__)

ROW_FIELDS = (
    "experiment",
    "attack",
    "window",
    "dataset",
    "column",
    "victim_size",
    "batch_size",
    "isolate",
    "participants",
    "hidden_dims",
    "membership",
    "prior",
    "label",
    "gamma",
    "repetitions",
    "seed",
    "accuracy",
    "accuracy_std",
    "mia_accuracy",
    "wall_time",
)


@dataclass
class ResultRow:
    experiment: str
    attack: str
    window: str
    dataset: str
    column: int
    victim_size: int
    batch_size: str
    isolate: bool
    participants: int
    hidden_dims: str
    membership: str
    prior: str
    label: str
    gamma: float
    repetitions: int
    seed: int
    accuracy: float
    accuracy_std: float
    mia_accuracy: float | None = None
    wall_time: float = field(default=0.0, compare=False)
    per_repetition: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def build_dataset(spec, seed):
    s = seed if spec.seed is None else spec.seed + seed
    if spec.kind == "synth_purchase":
        return dataio.synth_purchase_like(
            spec.n, spec.d, spec.classes, spec.marginal, seed=s,
            informative=spec.informative, label_noise=spec.label_noise,
        )
    if spec.kind == "synth_genome":
        n_pos = max(1, spec.n // 11)
        return dataio.synth_genome_like(spec.n - n_pos, n_pos, seed=s)
    if spec.kind == "csv":
        return dataio.load_binary_csv(spec.path, binary=False)
    return dataio.load_genome(spec.path)


def _marginal(values, K, smoothing=1.0):
    counts = np.bincount(values - 1, minlength=K).astype(float) + smoothing
    return counts / counts.sum()


def ground_truth(X, codebook):
    """True candidate indices of the sensitive column.  Metric use only."""
    return codebook.to_index(X[:, codebook.column])


def _one_repetition(cfg, rep):
    seed = cfg.seed + rep
    ds = build_dataset(cfg.dataset, seed)
    P = cfg.fed.participants
    sp = dataio.split(ds, dataio.SplitSpec(victim_size=cfg.victim_size, seed=seed), participants=P)
    victim = ds.subset(sp.victim)
    public = ds.subset(sp.public)
    participants = [victim] + [ds.subset(o) for o in sp.others]
    codebook = dataio.AttributeCodebook.from_column(ds.X, cfg.column)
    batch = None if cfg.fed.batch_size == "full" else int(cfg.fed.batch_size)
    rounds = cfg.fed.rounds or fedsim.rounds_needed(cfg.windows)
    if cfg.knowledge.membership == "unknown":
        rounds = max(rounds, 5)
    lr = cfg.fed.lr
    model = MlpConfig(ds.width, ds.num_classes, tuple(cfg.hidden_dims), seed)
    fed_cfg = fedsim.FedConfig(P, cfg.fed.isolate, rounds, batch, lr, seed)
    store, _ = fedsim.run_federation(fed_cfg, participants, 0, model)

    # the attacker's view: non-sensitive columns only
    x_ns = dataio.mask_column(victim.X, cfg.column)
    public_idx = codebook.to_index(public.X[:, cfg.column])
    prior = _marginal(public_idx, codebook.K) if cfg.knowledge.prior == "known" else None
    label_prior = None
    labels = victim.Y
    if cfg.knowledge.label == "unknown":
        labels = None
        if cfg.knowledge.prior == "known":
            label_prior = _marginal(public.Y + 1, ds.num_classes)

    out = {}
    for attack in cfg.attacks:
        windows = cfg.windows if attack in ("cos", "l2", "stats") else ["-"]
        for wname in windows:
            started = time.perf_counter()
            mia_acc = None
            if attack in ("cos", "l2", "stats"):
                window = fedsim.resolve_window(store, wname)
            if attack in ("cos", "l2"):
                problem = attacks.make_problem(
                    store, window, x_ns, codebook, labels,
                    prior=prior, label_prior=label_prior, gamma=cfg.gamma,
                    iterations=cfg.iterations, seed=seed,
                )
                method = attacks.cos_matching if attack == "cos" else attacks.l2_matching
                if cfg.knowledge.membership == "unknown":
                    acc, mia_acc = _membership_unknown(cfg, ds, sp, store, problem, method, seed)
                else:
                    if cfg.gamma_grid:
                        res = attacks.select_gamma(problem, cfg.gamma_grid, method)
                    else:
                        res = method(problem)
                    acc = res.evaluate(ground_truth(victim.X, codebook))
            elif attack == "stats":
                models = [s.start for s in store.select(window.rounds)]
                pred = attacks.stats_attack(models, model, x_ns, labels, codebook, "majority")
                acc = attacks.reconstruction_accuracy(pred, ground_truth(victim.X, codebook))
            elif attack.startswith("public"):
                n_pub = min(int(attack[len("public"):]), len(public))
                pred = attacks.public_model_attack(
                    dataio.mask_column(public.X[:n_pub], cfg.column),
                    public_idx[:n_pub], x_ns, codebook.K, seed=seed,
                )
                acc = attacks.reconstruction_accuracy(pred, ground_truth(victim.X, codebook))
            else:
                pred = attacks.random_guess(codebook.K, len(victim), seed)
                acc = attacks.reconstruction_accuracy(pred, ground_truth(victim.X, codebook))
            out[(attack, wname)] = (acc, mia_acc, time.perf_counter() - started)
    return out


def _membership_unknown(cfg, ds, sp, store, problem, method, seed):
    """MIA over victim + equally many held-out records, then ARA on members."""
    n = len(sp.victim)
    non_members = sp.test[:n]
    pool_idx = np.concatenate([sp.victim, non_members])
    is_member = np.r_[np.ones(n, int), np.zeros(len(non_members), int)]
    order = np.random.default_rng(seed).permutation(len(pool_idx))
    pool_idx, is_member = pool_idx[order], is_member[order]
    pool = ds.subset(pool_idx)
    pool_problem = replace(
        problem,
        x_ns=dataio.mask_column(pool.X, cfg.column),
        labels=pool.Y,
    )
    feature_rounds = fedsim.resolve_window(store, "last5").rounds
    feature_models = [s.start for s in store.select(feature_rounds)]
    result = mia.mia_then_ara(pool_problem, feature_models, seed=seed, attack=method)
    mia.evaluate_mia_ara(result, is_member, ground_truth(pool.X, problem.codebook))
    return result.ara_accuracy if result.ara_accuracy is not None else float("nan"), result.mia_accuracy


def run_experiment(cfg: ExperimentConfig):
    """Run every repetition and return one ResultRow per (attack, window)."""
    cfg.validate()
    reps = [_one_repetition(cfg, r) for r in range(cfg.repetitions)]
    rows = []
    for key in reps[0]:
        attack, window = key
        accs = np.array([r[key][0] for r in reps], dtype=float)
        mias = [r[key][1] for r in reps if r[key][1] is not None]
        rows.append(
            ResultRow(
                experiment=cfg.name,
                attack=attack,
                window=window,
                dataset=cfg.dataset.kind,
                column=cfg.column,
                victim_size=cfg.victim_size,
                batch_size=str(cfg.fed.batch_size),
                isolate=bool(cfg.fed.isolate),
                participants=cfg.fed.participants,
                hidden_dims="x".join(str(h) for h in cfg.hidden_dims),
                membership=cfg.knowledge.membership,
                prior=cfg.knowledge.prior,
                label=cfg.knowledge.label,
                gamma=cfg.gamma,
                repetitions=cfg.repetitions,
                seed=cfg.seed,
                accuracy=float(np.nanmean(accs)),
                accuracy_std=float(np.nanstd(accs)),
                mia_accuracy=float(np.mean(mias)) if mias else None,
                wall_time=float(sum(r[key][2] for r in reps)),
                per_repetition=[float(a) for a in accs],
            )
        )
    return rows
