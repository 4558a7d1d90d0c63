"""Membership inference from last-layer gradient variance with a 1-D GMM.

For a training member, every candidate obtained by swapping the sensitive
attribute is handled confidently by the memorising victim model, so the
last-layer gradient norms of its candidates are all small and nearly equal.
Non-members spread out.  A two-component Gaussian mixture fitted by EM on the
per-record variance separates the two groups; the smaller-mean component is
labelled Member.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import attacks
from .dataio import enumerate_all

log = logging.getLogger(__name__)

VAR_FLOOR = 1e-9
MEMBER, NON_MEMBER = 1, 0


@dataclass
class GmmModel:
    weights: np.ndarray  # (2,)
    means: np.ndarray  # (2,)
    variances: np.ndarray  # (2,)
    loglik_trace: list = field(default_factory=list)

    @property
    def member_component(self):
        return int(np.argmin(self.means))

    def log_joint(self, x):
        x = np.asarray(x, dtype=np.float64)[:, None]
        return (
            np.log(self.weights)
            - 0.5 * np.log(2 * np.pi * self.variances)
            - 0.5 * (x - self.means) ** 2 / self.variances
        )

    def responsibilities(self, x):
        lj = self.log_joint(x)
        lse = np.logaddexp(lj[:, 0], lj[:, 1])
        # logistic of the log-odds keeps an exact tie at exactly 1/2
        d = lj[:, 0] - lj[:, 1]
        resp = np.column_stack([expit(d), expit(-d)])
        return resp, float(lse.sum())

    def loglik(self, x):
        return self.responsibilities(x)[1]


def membership_features(models, model_cfg, candidates, labels):
    """Per-record variance over the K candidates of the last-layer gradient
    norm, averaged over the given checkpoints.

    ``candidates`` is an (M, K, width) array or a list of CandidateSets.
    """
    if len(models) == 0:
        raise ValueError("membership features need a non-empty epoch window")
    if not isinstance(candidates, np.ndarray):
        candidates = np.stack([c.rows for c in candidates])
    stats = attacks.candidate_statistics(models, model_cfg, candidates, labels)
    # (M, K, E) -> variance over K, mean over E
    return stats.grad_norm.var(axis=1).mean(axis=1)


def _init_two_points(x, rng):
    """k-means++ style: one random point, then one drawn with prob ~ D^2."""
    first = x[rng.integers(len(x))]
    d2 = (x - first) ** 2
    if d2.sum() == 0:
        raise ValueError("all features identical")
    second = x[rng.choice(len(x), p=d2 / d2.sum())]
    return np.array([first, second])


def em_step(model, x, floor=VAR_FLOOR):
    """One EM iteration; returns the updated model (trace not extended)."""
    resp, _ = model.responsibilities(x)
    nk = resp.sum(axis=0)
    nk = np.maximum(nk, 1e-300)
    means = (resp * x[:, None]).sum(axis=0) / nk
    variances = (resp * (x[:, None] - means) ** 2).sum(axis=0) / nk
    variances = np.maximum(variances, floor)
    weights = nk / nk.sum()
    return GmmModel(weights, means, variances, list(model.loglik_trace))


def fit_gmm(features, seed=0, tol=1e-8, max_iter=500, floor=VAR_FLOOR, n_init=10):
    """Fit a two-component 1-D Gaussian mixture by EM.

    Runs ``n_init`` k-means++ restarts and keeps the highest log-likelihood,
    so the result does not hinge on which record is drawn first.
    """
    x = np.asarray(features, dtype=np.float64).ravel()
    if x.size < 4:
        raise ValueError("need at least 4 points to fit a mixture")
    if np.all(x == x[0]):
        raise ValueError("all features identical; no mixture to fit")
    if n_init < 1:
        raise ValueError("n_init must be >= 1")
    rng = np.random.default_rng(seed)
    fits = [_fit_once(x, rng, tol, max_iter, floor) for _ in range(n_init)]
    return max(fits, key=lambda m: m.loglik_trace[-1])


def _fit_once(x, rng, tol, max_iter, floor):
    centers = _init_two_points(x, rng)
    nearest = np.abs(x[:, None] - centers).argmin(axis=1)
    variances = np.array(
        [x[nearest == k].var() if np.any(nearest == k) else x.var() for k in range(2)]
    )
    model = GmmModel(np.array([0.5, 0.5]), centers, np.maximum(variances, floor))
    ll = model.loglik(x)
    model.loglik_trace = [ll]
    for _ in range(max_iter):
        model = em_step(model, x, floor)
        new_ll = model.loglik(x)
        model.loglik_trace.append(new_ll)
        if abs(new_ll - ll) < tol:
            break
        ll = new_ll
    return model


def classify_membership(model, features):
    """Member when the posterior of the smaller-mean component exceeds 1/2.

    Returns ``(labels, member_posterior)`` with labels in {MEMBER, NON_MEMBER};
    an exact tie is Non-member.
    """
    resp, _ = model.responsibilities(features)
    post = resp[:, model.member_component]
    return np.where(post > 0.5, MEMBER, NON_MEMBER), post


def membership_accuracy(predicted, truth):
    return float(np.mean(np.asarray(predicted) == np.asarray(truth)))


@dataclass
class MiaAraResult:
    members: np.ndarray  # predicted Member flags over the candidate pool
    posterior: np.ndarray
    features: np.ndarray
    gmm: GmmModel
    ara: attacks.AttackResult
    mia_accuracy: float | None = None
    ara_accuracy: float | None = None

    def to_json(self):
        out = self.ara.to_json()
        out.update(
            {
                "membership_predictions": [int(v) for v in self.members],
                "membership_posterior": [float(v) for v in self.posterior],
                "mia_accuracy": self.mia_accuracy,
                "ara_accuracy": self.ara_accuracy,
                "gmm": {
                    "weights": self.gmm.weights.tolist(),
                    "means": self.gmm.means.tolist(),
                    "variances": self.gmm.variances.tolist(),
                },
            }
        )
        return out


def mia_then_ara(problem, feature_models, seed=0, attack=attacks.cos_matching):
    """Infer membership over ``problem``'s records, then attack the members.

    ``problem.x_ns`` is the candidate pool (members and non-members mixed);
    ``feature_models`` are the stored checkpoints used for the features.
    """
    started = time.perf_counter()
    if problem.labels is None:
        raise ValueError("the gradient-variance features need the true labels")
    candidates = enumerate_all(problem.x_ns, problem.codebook)
    feats = membership_features(feature_models, problem.model, candidates, problem.labels)
    gmm = fit_gmm(feats, seed=seed)
    members, post = classify_membership(gmm, feats)
    idx = np.flatnonzero(members == MEMBER)
    if idx.size == 0:
        log.warning("no records predicted as members; skipping reconstruction")
        ara = attacks.AttackResult("cos", np.zeros(0, dtype=int), np.zeros((0, problem.K)))
        ara.wall_time = time.perf_counter() - started
    else:
        ara = attack(problem.subset(idx))
    return MiaAraResult(members, post, feats, gmm, ara)


def evaluate_mia_ara(result, true_members, true_index):
    """Fill in MIA accuracy and reconstruction accuracy on predicted members.

    Metric-only: this is the one place ground truth enters.
    """
    result.mia_accuracy = membership_accuracy(result.members, true_members)
    idx = np.flatnonzero(result.members == MEMBER)
    if idx.size:
        result.ara_accuracy = result.ara.evaluate(np.asarray(true_index)[idx])
    return result
