"""Attribute reconstruction attacks from recorded victim updates.

The central attack relaxes each record's unknown categorical attribute into a
temperature-scaled softmax over the K codebook entries, turns that into an
expected index, feeds the resulting virtual records through the victim's
recorded models and matches the induced gradients to the observed ones.  The
cosine objective is maximised with Adam; the L2 variant is minimised with
L-BFGS.  Statistics heuristics, a public-data attack model and random guessing
are provided as baselines.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import nnmodel
from .dataio import AttributeCodebook, enumerate_all
from .errors import DivergenceError
from .nnmodel import MlpConfig, ParamVector
from .optim import LBFGS, Adam

log = logging.getLogger(__name__)

COS_EPS = 1e-12
DEFAULT_GAMMA_GRID = (0.1, 0.5, 1.0, 5.0)
HEURISTICS = (
    "label_status",
    "probability",
    "loss_sum",
    "final_loss",
    "grad_norm",
    "grad_true_label",
    "majority",
)


@dataclass
class AttackProblem:
    """Everything the server knows when attacking one victim.

    ``x_ns`` holds only the non-sensitive columns; the sensitive column is
    re-inserted at ``codebook.column`` from the relaxed variables.
    ``labels=None`` means the true labels are unknown.
    """

    x_ns: np.ndarray
    codebook: AttributeCodebook
    model: MlpConfig
    rounds: list  # [(start params flat, observed gradient flat), ...]
    labels: np.ndarray | None = None
    prior: np.ndarray | None = None
    label_prior: np.ndarray | None = None
    gamma: float = 1.0
    iterations: int = 2000
    lr: float = 0.01
    seed: int = 0
    gumbel_noise: bool = False
    patience: int = 50
    min_improvement: float = 1e-7

    def __post_init__(self):
        self.x_ns = np.asarray(self.x_ns, dtype=np.float64)
        if not self.rounds:
            raise ValueError("attack needs at least one round (T >= 1)")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.x_ns.ndim != 2 or self.x_ns.shape[1] != self.model.input_dim - 1:
            raise ValueError(
                f"x_ns has shape {self.x_ns.shape}, model expects {self.model.input_dim - 1} "
                "non-sensitive columns"
            )
        for name in ("prior", "label_prior"):
            p = getattr(self, name)
            if p is not None:
                p = np.asarray(p, dtype=np.float64)
                if np.any(p <= 0) or abs(p.sum() - 1.0) > 1e-9:
                    raise ValueError(f"{name} must be strictly positive and sum to 1")
                setattr(self, name, p)
        if self.prior is not None and self.prior.shape != (self.codebook.K,):
            raise ValueError("prior length must equal K")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)

    @property
    def N(self):
        return self.x_ns.shape[0]

    @property
    def K(self):
        return self.codebook.K

    @property
    def T(self):
        return len(self.rounds)

    def subset(self, idx):
        """The same problem restricted to records ``idx``."""
        from dataclasses import replace

        return replace(
            self,
            x_ns=self.x_ns[idx],
            labels=None if self.labels is None else self.labels[idx],
        )


def make_problem(store, window, x_ns, codebook, labels=None, **kwargs):
    """Build an :class:`AttackProblem` from a snapshot store and window."""
    rounds = window.rounds if hasattr(window, "rounds") else list(window)
    return AttackProblem(
        x_ns=x_ns,
        codebook=codebook,
        model=store.model,
        rounds=store.pairs(rounds),
        labels=labels,
        **kwargs,
    )


@dataclass
class AttackResult:
    method: str
    predicted: np.ndarray  # indices 1..K
    soft: np.ndarray | None = None
    trace: list = field(default_factory=list)
    accuracy: float | None = None
    label_predicted: np.ndarray | None = None
    iterations: int = 0
    wall_time: float = 0.0
    config: dict = field(default_factory=dict)

    def evaluate(self, true_index):
        """Set and return accuracy against ground-truth indices (metric only)."""
        true_index = np.asarray(true_index)
        self.accuracy = reconstruction_accuracy(self.predicted, true_index)
        return self.accuracy

    def to_json(self, max_trace=200):
        trace = list(self.trace)
        if len(trace) > max_trace:
            step = int(np.ceil(len(trace) / max_trace))
            trace = trace[::step] + ([trace[-1]] if (len(trace) - 1) % step else [])
        out = {
            "method": self.method,
            "config": self.config,
            "predictions": [int(v) for v in self.predicted],
            "accuracy": self.accuracy,
            "objective_trace": [float(v) for v in trace],
            "iterations": self.iterations,
            "wall_time": self.wall_time,
        }
        if self.label_predicted is not None:
            out["label_predictions"] = [int(v) for v in self.label_predicted]
        return out


def reconstruction_accuracy(predicted, true_index):
    predicted = np.asarray(predicted)
    if predicted.size == 0:
        return float("nan")
    return float(np.mean(predicted == np.asarray(true_index)))


# ---------------------------------------------------------------------------
# relaxation and virtual gradients


def relax_attribute(logits, gamma=1.0, noise=None):
    """Soft attribute per row: expected index under softmax(logits / gamma).

    Returns ``(probs, a)`` with ``a`` of shape (N, 1) in (1, K).
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    z = logits if noise is None else logits + ad.constant(noise)
    probs = ad.softmax(z * (1.0 / gamma), axis=1)
    K = logits.shape[1]
    positions = ad.constant(np.arange(1, K + 1, dtype=np.float64).reshape(K, 1))
    return probs, probs @ positions


def index_to_raw(a, codebook):
    """Map soft indices in [1, K] onto raw values by linear interpolation."""
    vals = codebook.values
    if codebook.is_affine:
        step = vals[1] - vals[0] if codebook.K > 1 else 0.0
        return (a - 1.0) * step + vals[0]
    out = ad.constant(np.full(a.shape, vals[0]))
    for k in range(1, codebook.K):
        # clip(a - k, 0, 1) scaled by the k-th gap
        ramp = ad.relu(a - float(k)) - ad.relu(a - float(k + 1))
        out = out + ramp * (vals[k] - vals[k - 1])
    return out


def virtual_input(x_ns, column, raw):
    """Re-insert the relaxed sensitive column at position ``column``."""
    parts = []
    if column > 0:
        parts.append(ad.constant(x_ns[:, :column]))
    parts.append(raw)
    if column < x_ns.shape[1]:
        parts.append(ad.constant(x_ns[:, column:]))
    return ad.concat(parts)


def virtual_gradient(w_flat, model, X_virtual, Y, create_graph=True):
    """Flat gradient of the mean loss on virtual data at parameters ``w_flat``."""
    weights = ParamVector.from_flat(model, w_flat).tensors(requires_grad=True)
    loss = nnmodel.cross_entropy(nnmodel.forward(weights, X_virtual), Y)
    grads = ad.grad(loss, weights, create_graph=create_graph)
    return ad.flatten_cat(grads)


def cosine_similarity(v, target, target_norm=None):
    """cos(v, target) with the denominator floored at COS_EPS."""
    if target_norm is None:
        target_norm = float(np.linalg.norm(target.data if isinstance(target, ad.Tensor) else target))
    denom = ad.norm2(v) * target_norm
    if denom.data < COS_EPS:
        denom = ad.constant(COS_EPS)
    return ad.dot(v, ad.constant(target)) / denom


def _split_vars(problem, flat):
    n, K = problem.N, problem.K
    attr = flat[: n * K].reshape(n, K)
    lab = None
    if problem.labels is None:
        lab = flat[n * K :].reshape(n, problem.model.num_classes)
    return attr, lab


def initial_variables(problem, rng):
    """Attribute (and label) logits per the known/unknown prior rule."""
    n, K, C = problem.N, problem.K, problem.model.num_classes
    if problem.prior is not None:
        attr = np.tile(np.log(problem.prior), (n, 1))
    else:
        attr = rng.standard_normal((n, K))
    parts = [attr.ravel()]
    if problem.labels is None:
        if problem.label_prior is not None:
            lab = np.tile(np.log(problem.label_prior), (n, 1))
        else:
            lab = rng.standard_normal((n, C))
        parts.append(lab.ravel())
    return np.concatenate(parts)


def matching_objective(problem, flat, kind="cos", noise=None, need_grad=True):
    """Objective over the window and its gradient w.r.t. the flat variables.

    ``kind`` is ``"cos"`` (sum of cosines, to maximise) or ``"l2"`` (sum of
    squared distances, to minimise).
    """
    n, K = problem.N, problem.K
    var = ad.Tensor(np.asarray(flat, dtype=np.float64), requires_grad=True)
    attr = ad.reshape(ad.vec_slice(var, 0, n * K), (n, K))
    _, a = relax_attribute(attr, problem.gamma, noise)
    raw = index_to_raw(a, problem.codebook)
    X_virtual = virtual_input(problem.x_ns, problem.codebook.column, raw)
    if problem.labels is None:
        C = problem.model.num_classes
        lab = ad.reshape(ad.vec_slice(var, n * K, n * K + n * C), (n, C))
        Y = ad.softmax(lab, axis=1)
    else:
        Y = problem.labels
    total = None
    for w_t, g_t in problem.rounds:
        v = virtual_gradient(w_t, problem.model, X_virtual, Y, create_graph=need_grad)
        if kind == "cos":
            term = cosine_similarity(v, g_t)
        elif kind == "l2":
            diff = v - ad.constant(g_t)
            term = ad.dot(diff, diff)
        else:
            raise ValueError(f"unknown objective {kind!r}")
        total = term if total is None else total + term
    if not need_grad:
        return total.item(), None
    return total.item(), ad.grad(total, var).data


def _finish(problem, method, flat, trace, started, iterations):
    attr, lab = _split_vars(problem, flat)
    with ad.no_grad():
        soft = ad.softmax(ad.Tensor(attr / problem.gamma)).data
    result = AttackResult(
        method=method,
        predicted=np.argmax(soft, axis=1) + 1,
        soft=soft,
        trace=trace,
        iterations=iterations,
        wall_time=time.perf_counter() - started,
        config={
            "gamma": problem.gamma,
            "T": problem.T,
            "K": problem.K,
            "N": problem.N,
            "seed": problem.seed,
            "prior_known": problem.prior is not None,
            "label_known": problem.labels is not None,
        },
    )
    if lab is not None:
        result.label_predicted = np.argmax(lab, axis=1)
    return result


def cos_matching(problem, callback=None):
    """Maximise the summed gradient cosine over the window with Adam."""
    started = time.perf_counter()
    if problem.N == 0:
        return _finish(problem, "cos", np.zeros(0), [], started, 0)
    rng = np.random.default_rng(problem.seed)
    x = initial_variables(problem, rng)
    opt = Adam(lr=problem.lr)
    trace = []
    it = 0
    for it in range(1, problem.iterations + 1):
        noise = None
        if problem.gumbel_noise:
            noise = rng.gumbel(size=(problem.N, problem.K))
        value, g = matching_objective(problem, x, "cos", noise)
        if not np.isfinite(value):
            raise DivergenceError("non-finite cos-matching objective", f"iteration {it}")
        trace.append(value)
        if callback is not None:
            callback(it, value)
        if (
            len(trace) > problem.patience
            and trace[-1] - trace[-1 - problem.patience] < problem.min_improvement
        ):
            break
        try:
            x = opt.step(x, -g)
        except DivergenceError as exc:
            raise DivergenceError("non-finite cos-matching gradient", f"iteration {it}") from exc
    return _finish(problem, "cos", x, trace, started, it)


def l2_matching(problem, max_iter=None):
    """Minimise the summed squared gradient distance with L-BFGS."""
    started = time.perf_counter()
    if problem.N == 0:
        return _finish(problem, "l2", np.zeros(0), [], started, 0)
    rng = np.random.default_rng(problem.seed)
    x0 = initial_variables(problem, rng)
    max_iter = max_iter or min(problem.iterations, 300)

    def fun(x):
        return matching_objective(problem, x, "l2")

    x, _, trace = LBFGS(history=10, c1=1e-4, backtrack=0.5).minimize(
        fun, x0, max_iter=max_iter, gtol=1e-12
    )
    if not np.isfinite(trace[-1]):
        raise DivergenceError("non-finite L2 objective", f"iteration {len(trace)}")
    return _finish(problem, "l2", x, trace, started, len(trace) - 1)


def select_gamma(problem, grid=DEFAULT_GAMMA_GRID, method=cos_matching):
    """Run the attack for each temperature and keep the best final objective.

    Selection uses only the attack objective, never ground truth.
    """
    from dataclasses import replace

    best = None
    for gamma in grid:
        res = method(replace(problem, gamma=gamma))
        score = res.trace[-1] if res.trace else -np.inf
        if method is l2_matching:
            score = -score
        if best is None or score > best[0]:
            best = (score, res)
    return best[1]


# ---------------------------------------------------------------------------
# statistics baselines


@dataclass
class StatisticMatrix:
    """Per-record K x E matrices, stored as arrays of shape (M, K, E)."""

    label_status: np.ndarray
    probability: np.ndarray
    loss: np.ndarray
    grad_norm: np.ndarray
    grad_true_label: np.ndarray

    @property
    def final_loss(self):
        return self.loss[:, :, -1]


def statistic_matrices(models, model_cfg, x_ns, labels, codebook):
    """Evaluate every candidate of every record under each stored model."""
    return candidate_statistics(models, model_cfg, enumerate_all(x_ns, codebook), labels)


def candidate_statistics(models, model_cfg, cands, labels):
    """Statistics for a candidate array of shape (M, K, width)."""
    if len(models) == 0:
        raise ValueError("stats attack needs at least one stored checkpoint")
    cands = np.asarray(cands, dtype=np.float64)
    M, K, width = cands.shape
    flat_rows = cands.reshape(M * K, width)
    y = np.repeat(np.asarray(labels, dtype=int), K)
    C = model_cfg.num_classes
    onehot = nnmodel.one_hot(y, C)
    out = {k: np.empty((M, K, len(models))) for k in
           ("label_status", "probability", "loss", "grad_norm", "grad_true_label")}
    for e, w in enumerate(models):
        params = ParamVector.from_flat(model_cfg, w)
        h, z = nnmodel.forward_numpy(params, flat_rows)
        z = z - z.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        p = np.exp(logp)
        p_y = p[np.arange(M * K), y]
        resid = p - onehot  # d loss / d logits
        # last-layer weight gradient of one example is outer(h, resid)
        out["label_status"][:, :, e] = (z.argmax(axis=1) == y).reshape(M, K)
        out["probability"][:, :, e] = p_y.reshape(M, K)
        out["loss"][:, :, e] = (-logp[np.arange(M * K), y]).reshape(M, K)
        out["grad_norm"][:, :, e] = (
            np.linalg.norm(h, axis=1) * np.linalg.norm(resid, axis=1)
        ).reshape(M, K)
        out["grad_true_label"][:, :, e] = (h.sum(axis=1) * (p_y - 1.0)).reshape(M, K)
    return StatisticMatrix(**out)


def majority_vote(votes):
    """Column-wise mode of an (H, M) array of indices; ties go to the lowest."""
    votes = np.asarray(votes, dtype=int)
    if votes.ndim == 1:
        votes = votes[:, None]
    top = votes.max()
    return np.array(
        [np.bincount(col, minlength=top + 1).argmax() for col in votes.T], dtype=int
    )


def stats_attack(models, model_cfg, x_ns, labels, codebook, heuristic="majority"):
    """Candidate selection by checkpoint statistics; requires true labels.

    ``models`` are the stored flat checkpoints (one per epoch).  Returns the
    predicted indices for ``heuristic``, or a dict of all seven when
    ``heuristic == "all"``.
    """
    if labels is None:
        raise ValueError("statistics heuristics require the true labels")
    s = statistic_matrices(models, model_cfg, x_ns, labels, codebook)
    # argmax / argmin return the first hit, so ties go to the lowest index
    preds = {
        "label_status": s.label_status.sum(axis=2).argmax(axis=1) + 1,
        "probability": s.probability.sum(axis=2).argmax(axis=1) + 1,
        "loss_sum": s.loss.sum(axis=2).argmin(axis=1) + 1,
        "final_loss": s.final_loss.argmin(axis=1) + 1,
        "grad_norm": s.grad_norm.sum(axis=2).argmax(axis=1) + 1,
        "grad_true_label": s.grad_true_label.sum(axis=2).argmax(axis=1) + 1,
    }
    preds["majority"] = majority_vote(np.stack([preds[h] for h in HEURISTICS[:6]]))
    if heuristic == "all":
        return preds
    if heuristic not in preds:
        raise ValueError(f"unknown heuristic {heuristic!r}")
    return preds[heuristic]


# ---------------------------------------------------------------------------
# public-set attack model and random guess


def public_model_attack(public_x_ns, public_index, targets_x_ns, K, hidden_dims=(128,),
                        epochs=300, lr=0.01, seed=0):
    """Train an MLP on public records mapping non-sensitive columns to the
    attribute index, then predict the targets' indices (1..K)."""
    public_x_ns = np.asarray(public_x_ns, dtype=np.float64)
    public_index = np.asarray(public_index, dtype=int)
    if public_x_ns.shape[0] == 0:
        raise ValueError("public set is empty")
    if public_index.shape[0] != public_x_ns.shape[0] or np.any(public_index < 1) or np.any(public_index > K):
        raise ValueError("public set needs a valid attribute index (1..K) for every record")
    cfg = MlpConfig(public_x_ns.shape[1], K, tuple(hidden_dims), seed)
    params = nnmodel.init_params(cfg)
    x = params.flat()
    opt = Adam(lr=lr)
    target = public_index - 1
    for _ in range(epochs):
        _, grads = nnmodel.loss_and_grads(ParamVector.from_flat(cfg, x), public_x_ns, target)
        x = opt.step(x, np.concatenate([g.data.ravel() for g in grads]))
    _, z = nnmodel.forward_numpy(ParamVector.from_flat(cfg, x), targets_x_ns)
    return z.argmax(axis=1) + 1


def random_guess(K, N, seed=0):
    return np.random.default_rng(seed).integers(1, K + 1, size=N)
