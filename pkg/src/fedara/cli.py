"""Command line interface.

    fedara federate --out DIR [...]          record a federation to DIR
    fedara attack --snapshots DIR --method cos --window pre5 --k 2
    fedara grid --config FILE --jobs 4 --out DIR
    fedara report --results FILE --axis window

Exit codes: 0 success, 2 configuration error, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import attacks, dataio, fedsim, mia
from .errors import ConfigError, DivergenceError
from .harness import config as hconfig
from .harness import report, runner
from .nnmodel import MlpConfig

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 2, 3
OUTPUT_ENV = "FEDARA_OUTPUT_DIR"

log = logging.getLogger("fedara")


def _default_out(name):
    return Path(os.environ.get(OUTPUT_ENV, ".")) / name


def _parse_batch(text):
    return None if text in ("full", None) else int(text)


# ---------------------------------------------------------------------------
# federate


def cmd_federate(args):
    if args.dataset == "synth":
        ds = dataio.synth_purchase_like(
            args.n, args.d, args.classes, args.marginal, seed=args.seed, label_noise=args.label_noise
        )
    elif args.dataset == "synth-genome":
        n_pos = max(1, args.n // 11)
        ds = dataio.synth_genome_like(args.n - n_pos, n_pos, seed=args.seed)
    elif args.dataset == "csv":
        ds = dataio.load_binary_csv(args.path, binary=False)
    else:
        ds = dataio.load_genome(args.path)
    if not 0 <= args.column < ds.width:
        raise ConfigError(f"--column {args.column} outside [0, {ds.width})")
    sp = dataio.split(
        ds, dataio.SplitSpec(victim_size=args.dv, seed=args.seed), participants=args.participants
    )
    victim = ds.subset(sp.victim)
    participants = [victim] + [ds.subset(o) for o in sp.others]
    model = MlpConfig(ds.width, ds.num_classes, tuple(args.hidden), args.seed)
    fed_cfg = fedsim.FedConfig(
        args.participants, args.isolate, args.rounds, _parse_batch(args.batch), args.lr, args.seed
    )
    store, _ = fedsim.run_federation(fed_cfg, participants, 0, model)
    codebook = dataio.AttributeCodebook.from_column(ds.X, args.column)
    store.meta = {
        "fed": fedsim.config_dict(fed_cfg),
        "column": args.column,
        "codebook": list(codebook.values),
        "victim_file": "victim.csv",
        "public_file": "public.csv",
        "nonmember_file": "nonmember.csv",
    }
    out = Path(args.out)
    store.save(out)
    dataio.write_csv(out / "victim.csv", victim)
    dataio.write_csv(out / "public.csv", ds.subset(sp.public))
    dataio.write_csv(out / "nonmember.csv", ds.subset(sp.test[: len(victim)]))
    print(f"recorded {len(store)} rounds to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# attack


def cmd_attack(args):
    snap_dir = Path(args.snapshots)
    store = fedsim.SnapshotStore.load(snap_dir)
    meta = store.meta
    column = args.column if args.column is not None else meta.get("column", 0)
    values = meta.get("codebook") or list(range(args.k))
    codebook = dataio.AttributeCodebook(column, tuple(values))
    if args.k is not None and args.k != codebook.K:
        raise ConfigError(f"--k {args.k} does not match the recorded codebook size {codebook.K}")
    victim = dataio.load_binary_csv(args.data or snap_dir / meta.get("victim_file", "victim.csv"),
                                    binary=False)
    x_ns = dataio.mask_column(victim.X, column)
    labels = victim.Y if args.label == "known" else None
    public = None
    public_path = snap_dir / meta.get("public_file", "public.csv")
    if public_path.exists():
        public = dataio.load_binary_csv(public_path, binary=False)
    prior = None
    if args.prior == "known" and public is not None:
        idx = codebook.to_index(public.X[:, column])
        prior = (np.bincount(idx - 1, minlength=codebook.K) + 1.0) / (len(idx) + codebook.K)
    if args.label == "unknown" and args.method in ("stats", "mia"):
        raise ConfigError(f"--method {args.method} requires --label known")

    payload = {"snapshots": str(snap_dir), "window": args.window, "method": args.method}
    truth = runner.ground_truth(victim.X, codebook)
    if args.method in ("cos", "l2", "mia"):
        window = fedsim.resolve_window(store, args.window)
        problem = attacks.make_problem(
            store, window, x_ns, codebook, labels, prior=prior, gamma=args.gamma,
            iterations=args.iterations, seed=args.seed,
        )
        if args.method == "mia":
            nonmember = dataio.load_binary_csv(
                snap_dir / meta.get("nonmember_file", "nonmember.csv"), binary=False
            )
            pool_X = np.vstack([victim.X, nonmember.X])
            pool_Y = np.concatenate([victim.Y, nonmember.Y])
            is_member = np.r_[np.ones(len(victim), int), np.zeros(len(nonmember), int)]
            order = np.random.default_rng(args.seed).permutation(len(pool_Y))
            pool_X, pool_Y, is_member = pool_X[order], pool_Y[order], is_member[order]
            pool_problem = attacks.AttackProblem(
                dataio.mask_column(pool_X, column), codebook, store.model, problem.rounds,
                pool_Y, prior=prior, gamma=args.gamma, iterations=args.iterations, seed=args.seed,
            )
            rounds = fedsim.resolve_window(store, "last5" if len(store) >= 5 else "all").rounds
            feats_models = [s.start for s in store.select(rounds)]
            res = mia.mia_then_ara(pool_problem, feats_models, seed=args.seed)
            mia.evaluate_mia_ara(res, is_member, runner.ground_truth(pool_X, codebook))
            payload.update(res.to_json())
        else:
            method = attacks.cos_matching if args.method == "cos" else attacks.l2_matching
            res = method(problem)
            res.evaluate(truth)
            payload.update(res.to_json())
    elif args.method == "stats":
        rounds = fedsim.resolve_window(store, args.window).rounds
        models = [s.start for s in store.select(rounds)]
        preds = attacks.stats_attack(models, store.model, x_ns, labels, codebook, "all")
        payload["heuristics"] = {
            h: {"predictions": [int(v) for v in p],
                "accuracy": attacks.reconstruction_accuracy(p, truth)}
            for h, p in preds.items()
        }
        payload["predictions"] = payload["heuristics"]["majority"]["predictions"]
        payload["accuracy"] = payload["heuristics"]["majority"]["accuracy"]
    elif args.method == "public":
        if public is None:
            raise ConfigError("no public.csv in the snapshot directory")
        n_pub = min(args.public_size, len(public))
        pred = attacks.public_model_attack(
            dataio.mask_column(public.X[:n_pub], column),
            codebook.to_index(public.X[:n_pub, column]), x_ns, codebook.K, seed=args.seed,
        )
        payload.update(predictions=[int(v) for v in pred],
                       accuracy=attacks.reconstruction_accuracy(pred, truth))
    else:
        pred = attacks.random_guess(codebook.K, len(victim), args.seed)
        payload.update(predictions=[int(v) for v in pred],
                       accuracy=attacks.reconstruction_accuracy(pred, truth))

    out = Path(args.out) if args.out else _default_out(f"attack_{args.method}_{args.window}.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(payload, indent=2))
    print(f"accuracy={payload.get('accuracy')} -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# grid and report


def _safe_name(name):
    return re.sub(r"[^A-Za-z0-9_.=,-]+", "_", name).strip("_") or "experiment"


def _run_one(cfg_dict, out_path):
    cfg = hconfig.from_dict(cfg_dict)
    rows = runner.run_experiment(cfg)
    Path(out_path).write_text(
        json.dumps({"config": cfg_dict, "rows": [r.to_dict() for r in rows]}, indent=2)
    )
    return str(out_path)


def cmd_grid(args):
    configs = hconfig.load_config_file(args.config)
    out = Path(args.out) if args.out else _default_out("grid")
    out.mkdir(parents=True, exist_ok=True)
    jobs = []
    for k, cfg in enumerate(configs):
        path = out / f"{k:03d}_{_safe_name(cfg.name)}.json"
        jobs.append((cfg.to_dict(), path))
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            paths = list(pool.map(_run_one, *zip(*jobs)))
    else:
        paths = [_run_one(c, p) for c, p in jobs]
    rows = [r for p in paths for r in report.read_rows_json(p)]
    report.write_rows_csv(rows, out / "results.csv")
    print(f"{len(paths)} experiments, {len(rows)} rows -> {out}")
    return EXIT_OK


def cmd_report(args):
    path = Path(args.results)
    if path.is_dir():
        rows = [r for p in sorted(path.glob("*.json")) for r in report.read_rows_json(p)]
    elif path.suffix == ".json":
        rows = report.read_rows_json(path)
    else:
        rows = report.read_rows_csv(path)
    text = report.trend_report(rows, args.axis, args.format)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="fedara", description="Attribute reconstruction attacks on FedAvg")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("federate", help="simulate FedAvg and record victim snapshots")
    f.add_argument("--out", required=True)
    f.add_argument("--dataset", choices=("synth", "synth-genome", "csv", "genome"), default="synth")
    f.add_argument("--path")
    f.add_argument("--n", type=int, default=3000)
    f.add_argument("--d", type=int, default=30)
    f.add_argument("--classes", type=int, default=10)
    f.add_argument("--marginal", type=float, default=0.5)
    f.add_argument("--label-noise", type=float, default=0.5)
    f.add_argument("--column", type=int, default=0)
    f.add_argument("--dv", type=int, default=50)
    f.add_argument("--batch", default="full")
    f.add_argument("--rounds", type=int, default=100)
    f.add_argument("--participants", type=int, default=1)
    f.add_argument("--isolate", action=argparse.BooleanOptionalAction, default=True)
    f.add_argument("--lr", type=float, default=0.01)
    f.add_argument("--hidden", type=int, nargs="+", default=[128])
    f.add_argument("--seed", type=int, default=0)
    f.set_defaults(func=cmd_federate)

    a = sub.add_parser("attack", help="run an attack against a recorded snapshot directory")
    a.add_argument("--snapshots", required=True)
    a.add_argument("--method", choices=("cos", "l2", "stats", "public", "random", "mia"), default="cos")
    a.add_argument("--window", choices=fedsim.WINDOW_NAMES + ("all",), default="pre5")
    a.add_argument("--k", type=int)
    a.add_argument("--column", type=int)
    a.add_argument("--data", help="victim CSV (defaults to the one recorded with the snapshots)")
    a.add_argument("--prior", choices=("known", "unknown"), default="known")
    a.add_argument("--label", choices=("known", "unknown"), default="known")
    a.add_argument("--gamma", type=float, default=1.0)
    a.add_argument("--iterations", type=int, default=2000)
    a.add_argument("--public-size", type=int, default=100)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out")
    a.set_defaults(func=cmd_attack)

    g = sub.add_parser("grid", help="run a config-file driven sweep")
    g.add_argument("--config", required=True)
    g.add_argument("--jobs", type=int, default=1)
    g.add_argument("--out")
    g.set_defaults(func=cmd_grid)

    r = sub.add_parser("report", help="tabulate results along one axis")
    r.add_argument("--results", required=True, help="results.csv, a result JSON, or a grid directory")
    r.add_argument("--axis", choices=report.AXES, default="window")
    r.add_argument("--format", choices=("markdown", "csv"), default="markdown")
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
