"""LogLoss / AUC / GAUC and impression-count cohorts."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Tuple

import numpy as np
from scipy.stats import rankdata

from .losses import logloss


class UndefinedMetricError(ValueError):
    pass


def auc(scores, labels) -> float:
    """Mann-Whitney AUC from average ranks; tied scores count one half."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels) > 0.5
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative")
    ranks = rankdata(s, method="average")
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def gauc(user_ids, scores, labels) -> Tuple[float, int]:
    """Impression-weighted mean of per-user AUC.

    Users whose records are all one class are left out of both numerator and
    denominator; their number is returned alongside the score.
    """
    u = np.asarray(user_ids)
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels) > 0.5
    if u.size == 0:
        raise UndefinedMetricError("GAUC of an empty record set")
    order = np.argsort(u, kind="stable")
    u, s, y = u[order], s[order], y[order]
    starts = np.flatnonzero(np.r_[True, u[1:] != u[:-1]])
    ends = np.r_[starts[1:], u.size]
    num = den = 0.0
    excluded = 0
    for a, b in zip(starts, ends):
        yy = y[a:b]
        npos = int(yy.sum())
        if npos == 0 or npos == b - a:
            excluded += 1
            continue
        num += (b - a) * auc(s[a:b], yy)
        den += b - a
    if den == 0:
        raise UndefinedMetricError("every user has single-class records; GAUC undefined")
    return float(num / den), excluded


COLD, WARM, OTHER = "cold", "warm", "other"


def stratify_cohorts(train_impression_counts: Mapping, cold_max: int = 20, warm_max: int = 50) -> Dict:
    """cold: count <= cold_max; warm: cold_max < count <= warm_max; other: the rest."""
    out = {}
    for user, n in train_impression_counts.items():
        if n < 0:
            raise ValueError(f"negative impression count for user {user!r}")
        out[user] = COLD if n <= cold_max else WARM if n <= warm_max else OTHER
    return out


def _or_nan(fn, *args):
    try:
        return fn(*args)
    except UndefinedMetricError:
        return float("nan")


@dataclass
class MetricsReport:
    logloss: float
    auc: float
    gauc: float
    users_excluded_from_gauc: int = 0
    n_records: int = 0
    per_cohort: Optional[Dict[str, dict]] = None

    def as_dict(self) -> dict:
        def clean(v):
            return None if isinstance(v, float) and math.isnan(v) else v
        d = {
            "logloss": clean(self.logloss),
            "auc": clean(self.auc),
            "gauc": clean(self.gauc),
            "users_excluded_from_gauc": self.users_excluded_from_gauc,
            "n_records": self.n_records,
        }
        if self.per_cohort is not None:
            d["per_cohort"] = {
                k: {kk: clean(vv) for kk, vv in v.items()} for k, v in self.per_cohort.items()
            }
        return d


def evaluate(user_ids, scores, labels, cohorts: Optional[Mapping] = None) -> MetricsReport:
    """Metrics over probability ``scores``; undefined values become NaN.

    ``cohorts`` maps user id -> cohort name; each named cohort gets its own
    section (empty cohorts included, with ``n_records`` 0).
    """
    u = np.asarray(user_ids)
    p = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if u.size == 0:
        return MetricsReport(float("nan"), float("nan"), float("nan"), 0, 0, None)
    try:
        g, excluded = gauc(u, p, y)
    except UndefinedMetricError:
        g, excluded = float("nan"), len(np.unique(u))
    report = MetricsReport(logloss(p, y), _or_nan(auc, p, y), g, excluded, int(u.size))
    if cohorts is not None:
        names = sorted(set(cohorts.values()) | {COLD, WARM})
        report.per_cohort = {}
        labels_of = np.array([cohorts.get(x, OTHER) for x in u.tolist()])
        for name in names:
            mask = labels_of == name
            if not mask.any():
                report.per_cohort[name] = {"logloss": float("nan"), "auc": float("nan"),
                                           "gauc": float("nan"), "n_records": 0}
                continue
            sub = evaluate(u[mask], p[mask], y[mask])
            report.per_cohort[name] = {"logloss": sub.logloss, "auc": sub.auc, "gauc": sub.gauc,
                                       "n_records": sub.n_records}
    return report
