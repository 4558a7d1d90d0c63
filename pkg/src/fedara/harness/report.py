"""Result tables: CSV round-tripping and axis-wise trend reports."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from .runner import ROW_FIELDS, ResultRow

AXES = ("window", "batch_size", "victim_size", "isolate", "participants", "hidden_dims")
WINDOW_ORDER = {"pre1": 0, "pre2": 1, "pre5": 2, "gap10": 3, "last5": 4}

_INT_FIELDS = {"column", "victim_size", "participants", "repetitions", "seed"}
_FLOAT_FIELDS = {"gamma", "accuracy", "accuracy_std", "mia_accuracy", "wall_time"}


def write_rows_csv(rows, path):
    with Path(path).open("w", newline="") as fh:
        fh.write(rows_to_csv(rows))


def rows_to_csv(rows):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(ROW_FIELDS) + ["per_repetition"])
    w.writeheader()
    for r in rows:
        d = r.to_dict()
        d["per_repetition"] = json.dumps(d["per_repetition"])
        d["mia_accuracy"] = "" if d["mia_accuracy"] is None else repr(d["mia_accuracy"])
        for k in ("accuracy", "accuracy_std", "gamma", "wall_time"):
            d[k] = repr(float(d[k]))
        w.writerow(d)
    return buf.getvalue()


def _parse(name, value):
    if name in _INT_FIELDS:
        return int(value)
    if name in _FLOAT_FIELDS:
        return None if value == "" else float(value)
    if name == "isolate":
        return value == "True"
    if name == "per_repetition":
        return json.loads(value) if value else []
    return value


def read_rows_csv(path):
    with Path(path).open(newline="") as fh:
        return [ResultRow(**{k: _parse(k, v) for k, v in rec.items()}) for rec in csv.DictReader(fh)]


def read_rows_json(path):
    data = json.loads(Path(path).read_text())
    return [ResultRow(**r) for r in data.get("rows", data if isinstance(data, list) else [])]


def _sort_key(axis, value):
    if axis == "window":
        return (WINDOW_ORDER.get(value, 99), str(value))
    if axis == "batch_size":
        return (1, 0) if value == "full" else (0, int(value))
    try:
        return (0, float(value))
    except (TypeError, ValueError):
        return (1, str(value))


def trend_table(rows, axis="window"):
    """Aggregate rows into (attack, axis value, mean, std, n) records.

    For the window axis a ``best`` record per attack holds the best mean over
    windows; it is reported next to, not instead of, the per-window rows.
    """
    if axis not in AXES:
        raise ValueError(f"axis must be one of {AXES}")
    groups = {}
    for r in rows:
        groups.setdefault((r.attack, getattr(r, axis)), []).append(r)
    table = []
    for attack in sorted({a for a, _ in groups}):
        values = sorted((v for a, v in groups if a == attack), key=lambda v: _sort_key(axis, v))
        per_attack = []
        for v in values:
            accs = np.array([r.accuracy for r in groups[(attack, v)]])
            stds = [r.accuracy_std for r in groups[(attack, v)]]
            per_attack.append(
                {"attack": attack, axis: v, "accuracy": float(accs.mean()),
                 "std": float(np.mean(stds)), "n": int(accs.size)}
            )
        table.extend(per_attack)
        if axis == "window" and any(rec["window"] in WINDOW_ORDER for rec in per_attack):
            best = max(
                (rec for rec in per_attack if rec["window"] in WINDOW_ORDER),
                key=lambda rec: rec["accuracy"],
            )
            table.append({**best, "window": f"best({best['window']})"})
    return table


def trend_report(rows, axis="window", fmt="markdown"):
    """Render the trend table as markdown or CSV text."""
    table = trend_table(rows, axis)
    header = ["attack", axis, "accuracy", "std", "n"]
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=header)
        w.writeheader()
        for rec in table:
            w.writerow(rec)
        return buf.getvalue()
    if fmt != "markdown":
        raise ValueError("fmt must be 'markdown' or 'csv'")
    if not table:
        return ""
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for rec in table:
        lines.append(
            f"| {rec['attack']} | {rec[axis]} | {rec['accuracy']:.4f} | {rec['std']:.4f} | {rec['n']} |"
        )
    return "\n".join(lines) + "\n"
