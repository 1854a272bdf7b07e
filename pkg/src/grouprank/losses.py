"""Training objectives. Every loss returns ``(value, grad)`` where ``grad`` is the
derivative with respect to the logits it consumed."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .core import log_sigmoid, sigmoid, softplus
from .grouping import GroupPartition, whole_batch_partition

PROB_CLAMP = 1e-12
LISTCE_EPS = 1e-12


class EvaluationError(ValueError):
    pass


class DiagnosticError(ValueError):
    pass


def logloss(predictions, labels) -> float:
    """Mean binary cross entropy of probabilities, clamped away from 0 and 1."""
    p = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.size == 0:
        raise EvaluationError("logloss of an empty batch is undefined")
    if p.shape != y.shape:
        raise EvaluationError(f"length mismatch {p.shape} vs {y.shape}")
    p = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def logloss_from_logits(s, y):
    """logloss(sigmoid(s), y) and its gradient ``(sigmoid(s) - y) / N`` in s."""
    s = np.asarray(s, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    p = sigmoid(s)
    return logloss(p, y), (p - y) / s.size


def listce_level(logits, labels, partition: GroupPartition, eps: float = LISTCE_EPS):
    """Grouped listwise cross entropy with sigmoid normalisation.

    Within each group labels are normalised to ``y / max(sum(y), eps)`` and
    scores to ``sigmoid(s) / sum(sigmoid(s))``; the level loss is the mean over
    groups of the per-group cross entropy. Groups without positives contribute
    exactly 0 and ``eps`` never perturbs groups that do have positives.
    """
    s = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    gid = partition.group_ids
    M = partition.n_groups
    ysum = np.bincount(gid, weights=y, minlength=M)
    y_norm = y / np.maximum(ysum, eps)[gid]
    w = np.bincount(gid, weights=y_norm, minlength=M)  # sum of normalised labels per group
    # log(sigmoid(s_i) / sum_j sigmoid(s_j)) via a per-group log-sum-exp: exact 0
    # for singletons and free of underflow for very negative logits
    log_p = log_sigmoid(s)
    gmax = np.full(M, -np.inf)
    np.maximum.at(gmax, gid, log_p)
    log_psum = gmax + np.log(np.bincount(gid, weights=np.exp(log_p - gmax[gid]), minlength=M))
    log_ratio = log_p - log_psum[gid]
    terms = np.where(y_norm != 0, -y_norm * log_ratio, 0.0)
    loss = float(np.bincount(gid, weights=terms, minlength=M).sum() / M)
    # d/ds_i: -ỹ_i (1 - p_i) + W_g p_i (1 - p_i) / S_g
    one_minus_p = sigmoid(-s)
    grad = (-y_norm * one_minus_p + w[gid] * np.exp(log_ratio) * one_minus_p) / M
    return loss, grad


def hierarchical_loss(per_level_losses, log_sigma):
    """sum_l L_l / (2 sigma_l^2) + log sigma_l with sigma_l = exp(log_sigma_l).

    Returns ``(value, d/d losses, d/d log_sigma)``.
    """
    L = np.asarray(per_level_losses, dtype=np.float64)
    ls = np.asarray(log_sigma, dtype=np.float64)
    if L.shape != ls.shape:
        raise ValueError(f"{L.size} level losses but {ls.size} uncertainty parameters")
    inv = np.exp(-2.0 * ls)
    value = float(np.sum(0.5 * L * inv + ls))
    return value, 0.5 * inv, 1.0 - L * inv


def pairwise_logistic(logits, labels):
    """Mean of log(1 + exp(-(s_pos - s_neg))) over all in-batch (pos, neg) pairs."""
    s = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels)
    pos = np.flatnonzero(y > 0.5)
    neg = np.flatnonzero(y <= 0.5)
    grad = np.zeros_like(s)
    if pos.size == 0 or neg.size == 0:
        return 0.0, grad
    diff = s[pos][:, None] - s[neg][None, :]
    n_pairs = diff.size
    loss = float(softplus(-diff).sum() / n_pairs)
    g = -sigmoid(-diff) / n_pairs
    grad[pos] = g.sum(axis=1)
    grad[neg] = -g.sum(axis=0)
    return loss, grad


def softmax_ce(logits, labels):
    """Whole-batch softmax cross entropy against labels normalised by positive count."""
    s = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    npos = y.sum()
    if npos == 0:
        return 0.0, np.zeros_like(s)
    z = s - s.max()
    log_q = z - np.log(np.exp(z).sum())
    y_norm = y / npos
    return float(-(y_norm * log_q).sum()), np.exp(log_q) - y_norm


@dataclass
class LossBreakdown:
    primary_logloss: float
    aux_logloss: float = 0.0
    per_level_listce: List[float] = field(default_factory=list)
    hierarchical: float = 0.0
    ranking: float = 0.0
    total: float = 0.0
    lambda_: float = 1.0

    def as_dict(self) -> dict:
        return {
            "primary_logloss": self.primary_logloss,
            "aux_logloss": self.aux_logloss,
            "per_level_listce": list(self.per_level_listce),
            "hierarchical": self.hierarchical,
            "ranking": self.ranking,
            "total": self.total,
            "lambda": self.lambda_,
        }


@dataclass
class LossGrads:
    ds: np.ndarray
    ds_q: Optional[np.ndarray]
    d_log_sigma: Optional[np.ndarray]


OBJECTIVES = ("logloss", "logloss+pairwise", "logloss+softmaxce", "logloss+listce", "groupce")


def total_loss(
    trace,
    labels,
    partitions: Sequence[GroupPartition],
    log_sigma,
    lam: float = 1.0,
    eps: float = LISTCE_EPS,
    use_hierarchical: bool = True,
):
    """Composite objective: logloss(s) + lam * logloss(s_q) + hierarchical ListCE on s.

    ``trace`` needs ``s`` and (when ``lam`` != 0) ``s_q``. Returns
    ``(LossBreakdown, LossGrads)``.
    """
    y = np.asarray(labels, dtype=np.float64)
    primary, ds = logloss_from_logits(trace.s, y)
    ds = ds.copy()
    aux, ds_q = 0.0, None
    if lam and trace.s_q is not None:
        aux, g = logloss_from_logits(trace.s_q, y)
        ds_q = lam * g
    per_level, hier, d_ls = [], 0.0, None
    if use_hierarchical and len(partitions):
        level_grads = []
        for part in partitions:
            v, g = listce_level(trace.s, y, part, eps)
            per_level.append(v)
            level_grads.append(g)
        hier, d_L, d_ls = hierarchical_loss(per_level, log_sigma)
        for w, g in zip(d_L, level_grads):
            ds += w * g
    total = primary + lam * aux + hier
    return (
        LossBreakdown(primary, aux, per_level, hier, 0.0, total, lam),
        LossGrads(ds, ds_q, d_ls),
    )


def baseline_loss(objective: str, s, labels, lam: float = 1.0, eps: float = LISTCE_EPS):
    """logloss plus an optional lam-weighted in-batch ranking term."""
    y = np.asarray(labels, dtype=np.float64)
    primary, ds = logloss_from_logits(s, y)
    rank, g = 0.0, None
    if objective == "logloss":
        pass
    elif objective == "logloss+pairwise":
        rank, g = pairwise_logistic(s, y)
    elif objective == "logloss+softmaxce":
        rank, g = softmax_ce(s, y)
    elif objective == "logloss+listce":
        rank, g = listce_level(s, y, whole_batch_partition(len(y)), eps)
    else:
        raise ValueError(f"unknown baseline objective {objective!r}")
    if g is not None:
        ds = ds + lam * g
    total = primary + lam * rank
    return LossBreakdown(primary, 0.0, [], 0.0, rank, total, lam), LossGrads(ds, None, None)


# ---------------------------------------------------------------- sampling diagnostic


@dataclass
class SamplingDiagnostic:
    per_negative_grad_norms: np.ndarray
    distribution: np.ndarray  # best distribution found by the search
    trace_variance: float
    search: str = "grid"
    candidates: dict = field(default_factory=dict)  # name -> (p, Tr V)


def trace_variance(grads, p) -> float:
    """Tr Var of g = grad_i / (N p_i) with i ~ p, by exact enumeration.

    ``grads`` is (N, P) per-negative gradients (a 1-D array is read as N scalar
    gradients). Entries with p_i = 0 and a zero gradient are skipped.
    """
    G = np.asarray(grads, dtype=np.float64)
    if G.ndim == 1:
        G = G[:, None]
    p = np.asarray(p, dtype=np.float64)
    N = G.shape[0]
    sq = (G * G).sum(axis=1)
    if np.any((p <= 0) & (sq > 0)):
        raise DiagnosticError("a negative with nonzero gradient has zero sampling probability")
    support = p > 0
    second = float(np.sum(sq[support] / p[support])) / N ** 2
    mean = G[support].sum(axis=0) / N
    return second - float(mean @ mean)


def _simplex_grid(n: int, resolution: int):
    """All points of the n-simplex with coordinates in multiples of 1/resolution."""
    if n == 1:
        return np.ones((1, 1))
    if n == 2:
        a = np.arange(resolution + 1) / resolution
        return np.stack([a, 1.0 - a], axis=1)
    pts = []
    for c in itertools.combinations(range(resolution + n - 1), n - 1):
        bars = np.array((-1,) + c + (resolution + n - 1,))
        pts.append(np.diff(bars) - 1)
    return np.array(pts, dtype=np.float64) / resolution


def _grid_points(n: int, resolution: int) -> int:
    from math import comb
    return comb(resolution + n - 1, n - 1)


def _mirror_descent(sq: np.ndarray, N: int, iters: int = 5000) -> np.ndarray:
    """Minimise sum sq_i / (N^2 p_i) over the simplex by exponentiated gradient."""
    support = sq > 0
    if not support.any():
        return np.full(N, 1.0 / N)
    p = np.where(support, 1.0, 0.0)
    p /= p.sum()
    a = sq[support] / N ** 2
    q = p[support]
    for t in range(iters):
        grad = -a / q ** 2
        step = 0.5 / (np.max(np.abs(grad)) + 1e-300)
        q = q * np.exp(-step * grad)
        q /= q.sum()
    p[support] = q
    return p


def sampling_variance(grads, p=None, resolution: int = 1000, max_grid_points: int = 2_000_000) -> SamplingDiagnostic:
    """Compare negative-sampling distributions by the trace of the estimator variance.

    Evaluates uniform, proportional-to-norm and proportional-to-squared-norm
    distributions (plus ``p`` if given) and searches the simplex for the
    minimiser: exhaustively on a grid of step ``1/resolution`` when that grid is
    small enough, otherwise by exponentiated-gradient descent.
    """
    G = np.asarray(grads, dtype=np.float64)
    if G.ndim == 1:
        G = G[:, None]
    if not np.all(np.isfinite(G)):
        raise DiagnosticError("per-negative gradients must be finite")
    N = G.shape[0]
    norms = np.sqrt((G * G).sum(axis=1))
    sq = norms ** 2
    cands = {}

    def add(name, dist):
        dist = np.asarray(dist, dtype=np.float64)
        try:
            cands[name] = (dist, trace_variance(G, dist))
        except DiagnosticError:
            cands[name] = (dist, float("inf"))

    add("uniform", np.full(N, 1.0 / N))
    if norms.sum() > 0:
        add("prop_norm", norms / norms.sum())
        add("prop_norm_sq", sq / sq.sum())
    else:
        add("prop_norm", np.full(N, 1.0 / N))
        add("prop_norm_sq", np.full(N, 1.0 / N))
    if p is not None:
        add("given", p)

    if _grid_points(N, resolution) <= max_grid_points:
        grid = _simplex_grid(N, resolution)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(grid > 0, sq[None, :] / grid, np.where(sq[None, :] > 0, np.inf, 0.0))
        mean = G.sum(axis=0) / N
        tv = ratio.sum(axis=1) / N ** 2 - float(mean @ mean)
        best = int(np.argmin(tv))
        search = "grid"
        add("search_optimum", grid[best])
    else:
        search = "mirror-descent"
        add("search_optimum", _mirror_descent(sq, N))

    best_p, best_tv = cands["search_optimum"]
    return SamplingDiagnostic(norms, best_p, best_tv, search, cands)
