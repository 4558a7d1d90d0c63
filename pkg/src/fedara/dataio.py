"""Datasets: loaders, synthetic generators, splits, codebooks and candidates.

Attribute values are handled in two spaces.  Raw values are what the model
consumes; candidate indices ``1..K`` address the ordered codebook.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import chi2_contingency

GENOME_ALPHABET = "ACGT"
GENOME_LENGTH = 20


class DataFormatError(ValueError):
    """Malformed input file; carries the 1-based line number when known."""

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


@dataclass
class Dataset:
    X: np.ndarray
    Y: np.ndarray
    num_classes: int
    attribute_names: list | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.Y = np.asarray(self.Y, dtype=np.int64)
        if self.X.ndim != 2 or self.X.shape[0] != self.Y.shape[0]:
            raise ValueError(f"X {self.X.shape} and Y {self.Y.shape} disagree")
        if self.X.shape[0] < 1:
            raise ValueError("dataset must have at least one row")
        if self.Y.min() < 0 or self.Y.max() >= self.num_classes:
            raise ValueError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return self.X.shape[0]

    @property
    def width(self):
        return self.X.shape[1]

    def subset(self, idx):
        return Dataset(self.X[idx], self.Y[idx], self.num_classes, self.attribute_names)


@dataclass(frozen=True)
class AttributeCodebook:
    """Ordered raw values of one categorical column; index k <-> values[k-1]."""

    column: int
    values: tuple

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if len(set(vals)) != len(vals):
            raise ValueError("codebook values must be distinct")
        if not vals:
            raise ValueError("codebook must not be empty")
        object.__setattr__(self, "values", vals)

    @property
    def K(self):
        return len(self.values)

    @classmethod
    def from_column(cls, X, column):
        return cls(column, tuple(np.unique(np.asarray(X)[:, column])))

    def to_index(self, raw):
        """Map raw values to indices 1..K; unknown values raise."""
        raw = np.asarray(raw, dtype=np.float64)
        vals = np.asarray(self.values)
        hit = raw[..., None] == vals
        if not hit.any(axis=-1).all():
            bad = raw[~hit.any(axis=-1)]
            raise ValueError(f"values {np.unique(bad)[:5]} not in codebook {self.values}")
        return hit.argmax(axis=-1) + 1

    def to_raw(self, index):
        return np.asarray(self.values)[np.asarray(index, dtype=int) - 1]

    @property
    def is_affine(self):
        if self.K < 3:
            return True
        steps = np.diff(self.values)
        return bool(np.all(steps == steps[0]))


@dataclass
class CandidateSet:
    """K copies of a record differing only in the codebook column."""

    base: np.ndarray
    rows: np.ndarray
    column: int
    true_index: int | None = None


@dataclass(frozen=True)
class SplitSpec:
    public_frac: float = 0.10
    train_frac: float = 0.8
    victim_size: int = 50
    seed: int = 0


@dataclass
class Split:
    public: np.ndarray
    train: np.ndarray
    test: np.ndarray
    victim: np.ndarray
    others: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# loaders


def load_binary_csv(path, header=None, binary=True):
    """Load rows of attributes with the integer class label in the last column.

    ``header=None`` sniffs for a non-numeric first row.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [(k + 1, r) for k, r in enumerate(csv.reader(fh)) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataFormatError("empty file", path)
    names = None
    if header is None:
        try:
            [float(c) for c in rows[0][1]]
            header = False
        except ValueError:
            header = True
    if header:
        names = [c.strip() for c in rows[0][1][:-1]]
        rows = rows[1:]
    if not rows:
        raise DataFormatError("no data rows", path)
    width = len(rows[0][1])
    if width < 2:
        raise DataFormatError("need at least one attribute and a label", path, rows[0][0])
    X = np.empty((len(rows), width - 1))
    Y = np.empty(len(rows), dtype=np.int64)
    for r, (line, cells) in enumerate(rows):
        if len(cells) != width:
            raise DataFormatError(f"expected {width} fields, got {len(cells)}", path, line)
        try:
            X[r] = [float(c) for c in cells[:-1]]
            label = float(cells[-1])
        except ValueError as exc:
            raise DataFormatError(str(exc), path, line) from None
        if label != int(label) or label < 0:
            raise DataFormatError(f"label {cells[-1]!r} is not a non-negative integer", path, line)
        Y[r] = int(label)
        if binary and not np.isin(X[r], (0.0, 1.0)).all():
            raise DataFormatError("non-binary attribute value", path, line)
    return Dataset(X, Y, int(Y.max()) + 1, names)


def write_csv(path, ds, header=False):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        if header:
            names = ds.attribute_names or [f"x{k}" for k in range(ds.width)]
            w.writerow([*names, "label"])
        for x, y in zip(ds.X, ds.Y):
            w.writerow([repr(float(v)) if v != int(v) else int(v) for v in x] + [int(y)])


def load_genome(path):
    """Sequence<TAB>label per line; nucleotides map A,C,G,T -> 1,2,3,4."""
    path = Path(path)
    X, Y = [], []
    for line_no, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataFormatError("expected '<sequence>\\t<label>'", path, line_no)
        seq, label = parts[0].strip().upper(), parts[1].strip()
        if len(seq) != GENOME_LENGTH:
            raise DataFormatError(f"sequence length {len(seq)} != {GENOME_LENGTH}", path, line_no)
        row = []
        for pos, ch in enumerate(seq, start=1):
            k = GENOME_ALPHABET.find(ch)
            if k < 0:
                raise DataFormatError(f"bad nucleotide {ch!r} at position {pos}", path, line_no)
            row.append(k + 1)
        if label not in ("0", "1"):
            raise DataFormatError(f"label {label!r} not in {{0,1}}", path, line_no)
        X.append(row)
        Y.append(int(label))
    if not X:
        raise DataFormatError("empty file", path)
    return Dataset(np.array(X, dtype=np.float64), np.array(Y), 2)


def write_genome(path, ds):
    lines = []
    for x, y in zip(ds.X, ds.Y):
        seq = "".join(GENOME_ALPHABET[int(v) - 1] for v in x)
        lines.append(f"{seq}\t{int(y)}")
    Path(path).write_text("\n".join(lines) + "\n")


def genome_codebook(column):
    return AttributeCodebook(column, (1, 2, 3, 4))


def discretize_equal_width(values, bins=4):
    """Bin a numeric column into ``bins`` equal-width bins, returning 1..bins."""
    values = np.asarray(values, dtype=np.float64)
    lo, hi = values.min(), values.max()
    if hi == lo:
        return np.ones(values.shape, dtype=np.int64)
    edges = np.linspace(lo, hi, bins + 1)
    return np.clip(np.digitize(values, edges[1:-1], right=False) + 1, 1, bins)


# ---------------------------------------------------------------------------
# synthetic generators


def synth_purchase_like(
    n,
    d,
    C,
    attr_variance_profile=0.5,
    seed=0,
    informative=None,
    label_noise=0.5,
):
    """Binary records with controlled per-column marginals and a planted label.

    ``attr_variance_profile`` is a scalar or per-column sequence of marginals
    P(x_j = 1); a Bernoulli column with marginal p has variance p(1-p).  Labels
    come from a random linear teacher over the ``informative`` columns (all by
    default) plus Gumbel noise of scale ``label_noise``.
    """
    if d < 2 or C < 2:
        raise ValueError("need d >= 2 and C >= 2")
    p = np.broadcast_to(np.asarray(attr_variance_profile, dtype=np.float64), (d,))
    if np.any(p <= 0) or np.any(p >= 1):
        raise ValueError("attribute marginals must lie strictly inside (0, 1)")
    rng = np.random.default_rng(seed)
    X = (rng.random((n, d)) < p).astype(np.float64)
    cols = np.arange(d) if informative is None else np.asarray(informative, dtype=int)
    teacher = rng.standard_normal((cols.size, C)) * 2.0
    bias = rng.standard_normal(C) * 0.1
    scores = (X[:, cols] - p[cols]) @ teacher + bias
    if label_noise > 0:
        scores = scores + label_noise * rng.gumbel(size=scores.shape)
    return Dataset(X, scores.argmax(axis=1), C)


def synth_genome_like(n_negative=2880, n_positive=288, seed=0, motif_columns=(6, 16)):
    """Length-20 nucleotide records with the 10:1 negative:positive shape.

    Positives carry a weak preference for a fixed motif at ``motif_columns``.
    """
    rng = np.random.default_rng(seed)
    neg = rng.integers(1, 5, size=(n_negative, GENOME_LENGTH))
    pos = rng.integers(1, 5, size=(n_positive, GENOME_LENGTH))
    for c in motif_columns:
        keep = rng.random(n_positive) < 0.5
        pos[keep, c] = 3
    X = np.vstack([neg, pos]).astype(np.float64)
    Y = np.concatenate([np.zeros(n_negative, int), np.ones(n_positive, int)])
    order = rng.permutation(len(Y))
    return Dataset(X[order], Y[order], 2)


# ---------------------------------------------------------------------------
# splitting


def split(ds, spec, participants=1):
    """Public / train / test split plus victim and other-participant subsets.

    The victim and the ``participants - 1`` others draw disjoint subsets of
    the training split, each of size ``spec.victim_size``.
    """
    n = len(ds)
    n_public = int(round(spec.public_frac * n))
    rest = n - n_public
    n_train = int(round(spec.train_frac * rest))
    need = participants * spec.victim_size
    if n_train < need or n_train <= 0:
        raise ValueError(
            f"insufficient rows: train split has {n_train}, need {need} for "
            f"{participants} participants of size {spec.victim_size}"
        )
    perm = np.random.default_rng(spec.seed).permutation(n)
    public = perm[:n_public]
    train = perm[n_public : n_public + n_train]
    test = perm[n_public + n_train :]
    chunks = [train[k * spec.victim_size : (k + 1) * spec.victim_size] for k in range(participants)]
    return Split(public, train, test, chunks[0], chunks[1:])


# ---------------------------------------------------------------------------
# candidates and statistics


def mask_column(X, column):
    """Drop the sensitive column; the attack only ever sees this view."""
    X = np.asarray(X, dtype=np.float64)
    return np.delete(X, column, axis=1)


def insert_column(X_ns, column, values):
    X_ns = np.asarray(X_ns, dtype=np.float64)
    return np.insert(X_ns, column, np.asarray(values, dtype=np.float64), axis=1)


def enumerate_candidates(record, codebook, width=None, true_index=None):
    """Expand one record into its K guess points.

    ``record`` may be a full-width row (its column entry is ignored) or the
    masked row of width - 1.
    """
    record = np.asarray(record, dtype=np.float64).ravel()
    if width is not None and record.size not in (width, width - 1):
        raise ValueError(f"record width {record.size} does not match dataset width {width}")
    base = record if width is None or record.size == width else insert_column(
        record[None, :], codebook.column, [np.nan]
    )[0]
    rows = np.repeat(base[None, :], codebook.K, axis=0)
    rows[:, codebook.column] = codebook.values
    return CandidateSet(base, rows, codebook.column, true_index)


def enumerate_all(X_ns, codebook):
    """Candidate rows for every masked record: array (M, K, width)."""
    X_ns = np.asarray(X_ns, dtype=np.float64)
    m, K = X_ns.shape[0], codebook.K
    full = np.repeat(insert_column(X_ns, codebook.column, np.zeros(m))[:, None, :], K, axis=1)
    full[:, :, codebook.column] = codebook.values
    return full


def attr_variance(ds, column):
    return float(np.var(ds.X[:, column]))


def cramers_v(ds, column):
    """Cramer's V between the column's categories and the label, in [0, 1]."""
    x = ds.X[:, column]
    cats, x_idx = np.unique(x, return_inverse=True)
    labs, y_idx = np.unique(ds.Y, return_inverse=True)
    if cats.size < 2 or labs.size < 2:
        return 0.0
    table = np.zeros((cats.size, labs.size))
    np.add.at(table, (x_idx, y_idx), 1)
    chi2 = chi2_contingency(table, correction=False)[0]
    v = np.sqrt(chi2 / (table.sum() * (min(table.shape) - 1)))
    return float(min(max(v, 0.0), 1.0))
