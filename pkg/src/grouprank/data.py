"""Interaction datasets: CSV ingestion, per-user stratified splits, batching and a
synthetic generator with latent user clusters."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np


class DataError(ValueError):
    pass


@dataclass
class InteractionDataset:
    user_index: np.ndarray  # (n,) dense user index into user_vocab
    item_index: np.ndarray
    labels: np.ndarray  # (n,) 0/1 int8
    user_features: np.ndarray  # (n, Fu) categorical ids
    item_features: np.ndarray  # (n, Fi)
    user_schema: List[Tuple[str, int]]  # (feature name, cardinality)
    item_schema: List[Tuple[str, int]]
    user_vocab: List[str] = field(default_factory=list)
    item_vocab: List[str] = field(default_factory=list)
    ground_truth_cluster: Optional[np.ndarray] = None  # per user index (synthetic only)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def subset(self, rows) -> "InteractionDataset":
        rows = np.asarray(rows, dtype=np.int64)
        return InteractionDataset(
            self.user_index[rows], self.item_index[rows], self.labels[rows],
            self.user_features[rows], self.item_features[rows],
            self.user_schema, self.item_schema, self.user_vocab, self.item_vocab,
            self.ground_truth_cluster,
        )

    def impression_counts(self) -> Dict[int, int]:
        users, counts = np.unique(self.user_index, return_counts=True)
        return dict(zip(users.tolist(), counts.tolist()))

    def validate(self) -> None:
        if not np.isin(self.labels, (0, 1)).all():
            raise DataError("labels must be 0 or 1")
        for feats, schema in ((self.user_features, self.user_schema), (self.item_features, self.item_schema)):
            for j, (name, card) in enumerate(schema):
                col = feats[:, j]
                if col.size and (col.min() < 0 or col.max() >= card):
                    raise DataError(f"feature {name!r} has ids outside [0, {card})")


# ------------------------------------------------------------------------- CSV


class _Vocab:
    def __init__(self):
        self.index: Dict[str, int] = {}

    def __call__(self, raw: str) -> int:
        return self.index.setdefault(raw, len(self.index))

    def values(self) -> List[str]:
        return list(self.index)


def load_csv(path, user_columns=None, item_columns=None) -> InteractionDataset:
    """Read ``user_id,item_id,label`` plus ``u_*`` / ``i_*`` categorical columns.

    ``user_id`` and ``item_id`` are themselves categorical features of the user
    and item towers. Raw values are mapped to ids in order of first appearance.
    Pass explicit ``user_columns`` / ``item_columns`` to select a subset.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, header row expected") from None
        header = [h.strip() for h in header]
        for required in ("user_id", "item_id", "label"):
            if required not in header:
                raise DataError(f"{path}: missing required column {required!r}")
        if user_columns is None:
            user_columns = ["user_id"] + [h for h in header if h.startswith("u_")]
        if item_columns is None:
            item_columns = ["item_id"] + [h for h in header if h.startswith("i_")]
        for c in list(user_columns) + list(item_columns):
            if c not in header:
                raise DataError(f"{path}: declared column {c!r} not in header")
        pos = {h: i for i, h in enumerate(header)}
        u_vocabs = [_Vocab() for _ in user_columns]
        i_vocabs = [_Vocab() for _ in item_columns]
        uf, itf, labels = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            raw_label = row[pos["label"]].strip()
            if raw_label not in ("0", "1"):
                raise DataError(f"{path}:{lineno}: label must be 0 or 1, got {raw_label!r}")
            labels.append(int(raw_label))
            uf.append([v(row[pos[c]].strip()) for v, c in zip(u_vocabs, user_columns)])
            itf.append([v(row[pos[c]].strip()) for v, c in zip(i_vocabs, item_columns)])
    if not labels:
        raise DataError(f"{path}: no data rows")
    uf = np.array(uf, dtype=np.int64)
    itf = np.array(itf, dtype=np.int64)
    return InteractionDataset(
        user_index=uf[:, 0].copy(),
        item_index=itf[:, 0].copy(),
        labels=np.array(labels, dtype=np.int8),
        user_features=uf,
        item_features=itf,
        user_schema=[(c, len(v.index)) for c, v in zip(user_columns, u_vocabs)],
        item_schema=[(c, len(v.index)) for c, v in zip(item_columns, i_vocabs)],
        user_vocab=u_vocabs[0].values(),
        item_vocab=i_vocabs[0].values(),
    )


def write_csv(ds: InteractionDataset, path) -> None:
    """Write rows back out with raw vocabulary values (round-trips ``load_csv``)."""
    ucols = [n for n, _ in ds.user_schema]
    icols = [n for n, _ in ds.item_schema]
    extra_u = [c for c in ucols if c != "user_id"]
    extra_i = [c for c in icols if c != "item_id"]
    uv = ds.user_vocab or [str(i) for i in range(ds.user_schema[0][1])]
    iv = ds.item_vocab or [str(i) for i in range(ds.item_schema[0][1])]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_id", "item_id", "label"] + extra_u + extra_i)
        for r in range(len(ds)):
            w.writerow(
                [uv[ds.user_index[r]], iv[ds.item_index[r]], int(ds.labels[r])]
                + [int(ds.user_features[r, ucols.index(c)]) for c in extra_u]
                + [int(ds.item_features[r, icols.index(c)]) for c in extra_i]
            )


# ----------------------------------------------------------------------- split


@dataclass
class SplitSpec:
    train_frac: float = 0.7
    valid_frac: float = 0.1
    test_frac: float = 0.2
    seed: int = 0

    def __post_init__(self):
        fr = (self.train_frac, self.valid_frac, self.test_frac)
        if any(f < 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must be nonnegative and sum to 1, got {fr}")

    @property
    def fractions(self) -> np.ndarray:
        return np.array([self.train_frac, self.valid_frac, self.test_frac])


def _allocate(n: int, fracs: np.ndarray, rng, min_each: int = 0) -> np.ndarray:
    """Split n items into per-split counts with expected value n * fracs.

    Floors are taken first; the leftover items go to splits drawn without
    replacement with probability proportional to the fractional parts.
    """
    target = n * fracs
    counts = np.floor(target).astype(np.int64)
    if min_each:
        counts = np.maximum(counts, min_each)
        while counts.sum() > n:
            excess = np.where(counts > min_each, counts - target, -np.inf)
            counts[int(np.argmax(excess))] -= 1
    left = n - counts.sum()
    if left > 0:
        rem = np.clip(target - counts, 0, None)
        if rem.sum() <= 0:
            rem = fracs.copy()
        nz = np.count_nonzero(rem)
        take = rng.choice(3, size=min(left, nz), replace=False, p=rem / rem.sum())
        counts[take] += 1
        left = n - counts.sum()
        if left > 0:
            counts[0] += left
    return counts


def stratified_split(ds: InteractionDataset, spec: SplitSpec = None):
    """Per-user shuffled 70/10/20 split.

    Users with at least three positives get at least one positive in every
    split. Users with fewer have all their positives placed in train and are
    reported in ``flagged``.

    Returns ``(train_rows, valid_rows, test_rows, flagged_users)``.
    """
    spec = spec or SplitSpec()
    if len(ds) == 0:
        raise DataError("cannot split an empty dataset")
    rng = np.random.default_rng(spec.seed)
    fracs = spec.fractions
    buckets = ([], [], [])
    flagged = []
    order = np.argsort(ds.user_index, kind="stable")
    users = ds.user_index[order]
    starts = np.flatnonzero(np.r_[True, users[1:] != users[:-1]])
    ends = np.r_[starts[1:], users.size]
    for a, b in zip(starts, ends):
        rows = order[a:b]
        y = ds.labels[rows]
        pos = rng.permutation(rows[y == 1])
        neg = rng.permutation(rows[y == 0])
        if pos.size >= 3:
            pc = _allocate(pos.size, fracs, rng, min_each=1)
        else:
            pc = np.array([pos.size, 0, 0])
            flagged.append(int(users[a]))
        nc = _allocate(neg.size, fracs, rng)
        for part, counts in ((pos, pc), (neg, nc)):
            cuts = np.cumsum(counts)[:-1]
            for bucket, chunk in zip(buckets, np.split(part, cuts)):
                bucket.append(chunk)
    out = tuple(np.sort(np.concatenate(b)) if b else np.zeros(0, dtype=np.int64) for b in buckets)
    return out[0], out[1], out[2], flagged


def write_manifest(path, rows) -> None:
    Path(path).write_text("\n".join(str(int(r)) for r in rows) + "\n")


def read_manifest(path) -> np.ndarray:
    text = Path(path).read_text().split()
    return np.array([int(t) for t in text], dtype=np.int64)


# --------------------------------------------------------------------- batches


@dataclass
class Batch:
    rows: np.ndarray
    user_index: np.ndarray
    x_u: np.ndarray
    x_i: np.ndarray
    labels: np.ndarray


def make_batch(ds: InteractionDataset, rows) -> Batch:
    rows = np.asarray(rows, dtype=np.int64)
    return Batch(rows, ds.user_index[rows], ds.user_features[rows], ds.item_features[rows],
                 ds.labels[rows].astype(np.float64))


def batch_iter(ds: InteractionDataset, batch_size: int, shuffle: bool = True, seed=0) -> Iterator[Batch]:
    """One epoch of batches; the last batch may be short."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    n = len(ds)
    order = np.random.default_rng(seed).permutation(n) if shuffle else np.arange(n)
    for a in range(0, n, batch_size):
        yield make_batch(ds, order[a:a + batch_size])


# ------------------------------------------------------------------- synthetic


@dataclass
class GenConfig:
    users: int = 2000
    items: int = 200
    clusters: int = 8
    latent_dim: int = 8
    impressions_per_user: int = 50
    noise: float = 1.0  # scale of the logistic label noise; 0 gives deterministic labels
    preference_scale: float = 4.0
    user_deviation: float = 0.3  # per-user spread around the cluster preference
    popularity_skew: float = 1.0  # Zipf exponent of item exposure
    popularity_effect: float = 0.5  # how much exposure popularity lifts label odds
    base_logit: float = -1.0
    user_bias_std: float = 0.5  # per-user activity offset on the label logit
    profile_noise: float = 1.0  # chance the u_segment profile feature is randomised; 1 drops it
    positive_rate_band: Tuple[float, float] = (0.1, 0.5)
    seed: int = 0

    def __post_init__(self):
        if self.clusters > self.users:
            raise ValueError("clusters must not exceed users")
        for name in ("users", "items", "clusters", "latent_dim", "impressions_per_user"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")
        self.positive_rate_band = tuple(self.positive_rate_band)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def synthesize(cfg: GenConfig = None) -> InteractionDataset:
    return synthesize_with_truth(cfg)[0]


def synthesize_with_truth(cfg: GenConfig = None):
    """Clustered users rating items with latent archetype vectors.

    Each cluster has a unit preference direction; users deviate from it by
    ``user_deviation``. An impression's label is ``1[z + noise * e > 0]`` where
    ``z = preference_scale * <user pref, item vector> + popularity lift + base``
    and ``e`` is standard logistic noise, so for ``noise > 0`` the label is
    Bernoulli(sigmoid(z / noise)). Items are exposed with Zipf popularity.

    Returns ``(dataset, truth)``; ``truth`` holds the latent logit ``z`` per row
    and the within-user part of it (``z`` minus the user offset).
    """
    cfg = cfg or GenConfig()
    rng = np.random.default_rng(cfg.seed)
    U, I, G, k = cfg.users, cfg.items, cfg.clusters, cfg.latent_dim

    centers = rng.normal(size=(G, k))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    cluster = np.sort(rng.integers(0, G, size=U)) if G > 1 else np.zeros(U, dtype=np.int64)
    cluster = rng.permutation(cluster)
    user_pref = centers[cluster] + cfg.user_deviation * rng.normal(size=(U, k)) / np.sqrt(k)
    user_bias = cfg.user_bias_std * rng.normal(size=U)
    segment = np.where(rng.uniform(size=U) < cfg.profile_noise, rng.integers(0, G, size=U), cluster)

    item_vec = rng.normal(size=(I, k)) / np.sqrt(k) * np.sqrt(2.0)
    ranks = rng.permutation(I) + 1
    exposure = ranks.astype(np.float64) ** -cfg.popularity_skew
    exposure /= exposure.sum()
    pop_lift = cfg.popularity_effect * (np.log(exposure) - np.log(exposure).mean()) / max(
        np.log(exposure).std(), 1e-12)

    n_imp = cfg.impressions_per_user
    users = np.repeat(np.arange(U), n_imp)
    items = np.empty(U * n_imp, dtype=np.int64)
    for u in range(U):
        items[u * n_imp:(u + 1) * n_imp] = rng.choice(I, size=n_imp, replace=n_imp > I, p=exposure)
    z = cfg.preference_scale * np.einsum("nk,nk->n", user_pref[users], item_vec[items])
    z += pop_lift[items] + user_bias[users] + cfg.base_logit
    u01 = rng.uniform(size=z.shape)
    logistic_noise = np.log(u01) - np.log1p(-u01)
    labels = (z + cfg.noise * logistic_noise > 0).astype(np.int8)

    user_features = users[:, None].copy()
    user_schema = [("user_id", U)]
    if cfg.profile_noise < 1:
        user_features = np.stack([users, segment[users]], axis=1)
        user_schema.append(("u_segment", G))
    truth = {"logit": z, "cluster_logit": cfg.preference_scale * np.einsum(
        "nk,nk->n", centers[cluster[users]], item_vec[items]) + pop_lift[items]}
    ds = InteractionDataset(
        user_index=users,
        item_index=items,
        labels=labels,
        user_features=user_features,
        item_features=items[:, None].copy(),
        user_schema=user_schema,
        item_schema=[("item_id", I)],
        user_vocab=[f"u{i}" for i in range(U)],
        item_vocab=[f"i{i}" for i in range(I)],
        ground_truth_cluster=cluster,
    )
    return ds, truth


def write_cluster_file(ds: InteractionDataset, path) -> None:
    with Path(path).open("w", newline="") as fh:
        fh.write("user_id,cluster\n")
        for u, c in enumerate(ds.ground_truth_cluster.tolist()):
            fh.write(f"{ds.user_vocab[u]},{c}\n")
