"""Trie partitions of a batch: rows whose user codes share a length-l prefix form
one group at level l."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np


@dataclass
class GroupPartition:
    level: int
    group_ids: np.ndarray  # (n,) group index of each batch row
    prefixes: np.ndarray  # (M, level) code prefix per group, lexicographic order

    @property
    def n_groups(self) -> int:
        return self.prefixes.shape[0]

    @property
    def groups(self) -> List[List[int]]:
        order = np.argsort(self.group_ids, kind="stable")
        bounds = np.searchsorted(self.group_ids[order], np.arange(self.n_groups + 1))
        return [order[bounds[m]:bounds[m + 1]].tolist() for m in range(self.n_groups)]

    def sizes(self) -> np.ndarray:
        return np.bincount(self.group_ids, minlength=self.n_groups)


def build_partitions(codes) -> List[GroupPartition]:
    """One partition per level 1..L from an (n, L) code matrix."""
    if isinstance(codes, np.ndarray):
        arr = codes
    else:
        rows = [tuple(c) for c in codes]
        if len({len(r) for r in rows}) > 1:
            raise ValueError("all hierarchical codes must have the same length")
        arr = np.array(rows, dtype=np.int64)
    arr = np.asarray(arr, dtype=np.int64)
    if arr.ndim != 2:
        raise ValueError(f"codes must be an (n, L) matrix, got shape {arr.shape}")
    if arr.size and arr.min() < 0:
        raise ValueError("codes must be non-negative")
    radix = arr.max(axis=0) + 1 if arr.size else np.ones(arr.shape[1], dtype=np.int64)
    parts = []
    key = np.zeros(arr.shape[0], dtype=np.int64)
    packed = True
    for level in range(1, arr.shape[1] + 1):
        # Mixed-radix packing keeps lexicographic prefix order, so a 1-D unique
        # is equivalent to np.unique(..., axis=0) and much faster.
        r = int(radix[level - 1])
        packed = packed and int(key.max(initial=0)) < (2**62) // r
        if packed:
            key = key * r + arr[:, level - 1]
            _, first, inverse = np.unique(key, return_index=True, return_inverse=True)
            prefixes = arr[first, :level]
        else:
            prefixes, inverse = np.unique(arr[:, :level], axis=0, return_inverse=True)
        parts.append(GroupPartition(level, inverse.reshape(-1), prefixes))
    return parts


def whole_batch_partition(n: int) -> GroupPartition:
    """Single group holding every row (plain in-batch listwise loss)."""
    return GroupPartition(0, np.zeros(n, dtype=np.int64), np.zeros((1, 0), dtype=np.int64))


def refinement_check(partitions: Sequence[GroupPartition]) -> bool:
    """True iff each level-(l+1) group lies inside exactly one level-l group."""
    for coarse, fine in zip(partitions[:-1], partitions[1:]):
        parent = {}
        for f, c in zip(fine.group_ids.tolist(), coarse.group_ids.tolist()):
            if parent.setdefault(f, c) != c:
                return False
    return True


def group_size_dump(partitions: Sequence[GroupPartition], step: int) -> str:
    """One text line of group sizes per level, for debugging runs."""
    fields = []
    for p in partitions:
        sizes = sorted(p.sizes().tolist(), reverse=True)
        fields.append(f"L{p.level}:groups={p.n_groups}:sizes={','.join(map(str, sizes))}")
    return f"step={step} " + " ".join(fields)
