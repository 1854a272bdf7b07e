"""
Residual codes and trie groups
==============================

A batch of user embeddings is quantized level by level; rows sharing a code
prefix form a group at that level, so deeper levels split groups further.
"""

import numpy as np

from grouprank import build_partitions, init_codebooks, quantize
from grouprank.grouping import group_size_dump

rng = np.random.default_rng(0)

# three well separated "taste" clusters in 8 dimensions
centers = rng.normal(scale=3.0, size=(3, 8))
users = centers[rng.integers(0, 3, size=60)] + rng.normal(scale=0.5, size=(60, 8))

state = init_codebooks(users, K=4, L=3, seed=1)
q = quantize(users, state)
print("first five hierarchical codes:\n", q.codes[:5])

# the reconstruction plus the final residual gives back the embedding exactly
print("telescoping error:", np.abs(users - q.reconstruction - q.residual_trail[-1]).max())

# error shrinks as levels are added
for level in range(1, 4):
    partial = sum(state.codebooks[l].vectors[q.codes[:, l]] for l in range(level))
    print(f"levels 1..{level}: mean squared residual {np.mean((users - partial) ** 2):.3f}")

parts = build_partitions(q.codes)
print(group_size_dump(parts, step=0))
