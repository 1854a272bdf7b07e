"""User/item towers and the shared main network, with a hand-written backward pass.

The quantized path runs the same main-network weights on (quantized user
embedding, detached item embedding); see ``dual_path_forward`` and ``backward``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .core import ParamStore, ShapeError, affine, affine_backward, relu, relu_backward
from . import rvq as rvq_mod


class FeatureRangeError(ValueError):
    pass


def embedding_dim(cardinality: int) -> int:
    """max(floor(log2(cardinality)) * 2, 16)."""
    if cardinality < 1:
        raise ValueError("cardinality must be >= 1")
    return max(int(math.floor(math.log2(cardinality))) * 2, 16)


@dataclass
class EmbeddingTable:
    feature_name: str
    cardinality: int
    dim: int = 0

    def __post_init__(self):
        if not self.dim:
            self.dim = embedding_dim(self.cardinality)

    def param_name(self, tower: str) -> str:
        return f"{tower}.emb.{self.feature_name}"


@dataclass
class TowerConfig:
    hidden_sizes: List[int] = field(default_factory=lambda: [64, 64])
    user_embedding_dim: int = 32
    activation: str = "relu"

    def __post_init__(self):
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        if not self.hidden_sizes or any(h < 1 for h in self.hidden_sizes):
            raise ValueError("hidden_sizes must be a nonempty list of positive sizes")


def glorot(rng, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class MLP:
    """Dense stack: relu on hidden layers, linear output layer."""

    def __init__(self, prefix: str, sizes: Sequence[int]):
        self.prefix = prefix
        self.sizes = list(sizes)

    def layer_names(self, i):
        return f"{self.prefix}.l{i}.W", f"{self.prefix}.l{i}.b"

    @property
    def n_layers(self):
        return len(self.sizes) - 1

    def init(self, params: ParamStore, rng) -> None:
        for i in range(self.n_layers):
            w, b = self.layer_names(i)
            params.add(w, glorot(rng, self.sizes[i], self.sizes[i + 1]))
            params.add(b, np.zeros(self.sizes[i + 1]))

    def forward(self, params: ParamStore, x: np.ndarray):
        if x.shape[1] != self.sizes[0]:
            raise ShapeError(f"{self.prefix}: input width {x.shape[1]} != {self.sizes[0]}")
        inputs, pre = [], []
        h = x
        for i in range(self.n_layers):
            w, b = self.layer_names(i)
            inputs.append(h)
            z = affine(h, params[w], params[b])
            pre.append(z)
            h = relu(z) if i < self.n_layers - 1 else z
        return h, (inputs, pre)

    def backward(self, params: ParamStore, cache, dout: np.ndarray, accumulate: bool = True) -> np.ndarray:
        inputs, pre = cache
        g = dout
        for i in reversed(range(self.n_layers)):
            w, b = self.layer_names(i)
            if i < self.n_layers - 1:
                g = relu_backward(pre[i], g)
            gw = params.grad(w) if accumulate else None
            gb = params.grad(b) if accumulate else None
            g = affine_backward(inputs[i], params[w], g, gw, gb)
        return g


class Tower:
    """Concatenated categorical embeddings followed by an MLP."""

    def __init__(self, name: str, tables: Sequence[EmbeddingTable], hidden: Sequence[int], out_dim: int):
        self.name = name
        self.tables = list(tables)
        self.in_dim = sum(t.dim for t in self.tables)
        self.mlp = MLP(name, [self.in_dim, *hidden, out_dim])

    def init(self, params: ParamStore, rng) -> None:
        for t in self.tables:
            params.add(t.param_name(self.name), rng.normal(0.0, 0.01, size=(t.cardinality, t.dim)))
        self.mlp.init(params, rng)

    def embed(self, params: ParamStore, ids: np.ndarray) -> np.ndarray:
        return embed_features(ids, self.tables, params, self.name)

    def forward(self, params: ParamStore, ids: np.ndarray):
        ids = np.asarray(ids, dtype=np.int64)
        x = self.embed(params, ids)
        out, cache = self.mlp.forward(params, x)
        return out, (ids, cache)

    def backward(self, params: ParamStore, cache, dout: np.ndarray) -> None:
        ids, mlp_cache = cache
        dx = self.mlp.backward(params, mlp_cache, dout)
        col = 0
        for j, t in enumerate(self.tables):
            np.add.at(params.grad(t.param_name(self.name)), ids[:, j], dx[:, col:col + t.dim])
            col += t.dim


def embed_features(ids, tables: Sequence[EmbeddingTable], params: ParamStore, tower: str) -> np.ndarray:
    """Row-wise concatenation of embedding lookups, one column of ``ids`` per table."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 2 or ids.shape[1] != len(tables):
        raise ShapeError(f"{tower}: expected ids of shape (n, {len(tables)}), got {ids.shape}")
    parts = []
    for j, t in enumerate(tables):
        col = ids[:, j]
        if col.size and (col.min() < 0 or col.max() >= t.cardinality):
            bad = col[(col < 0) | (col >= t.cardinality)][0]
            raise FeatureRangeError(
                f"feature {t.feature_name!r}: id {bad} outside [0, {t.cardinality})"
            )
        parts.append(params[t.param_name(tower)][col])
    return np.concatenate(parts, axis=1)


@dataclass
class ForwardTrace:
    e_u: np.ndarray
    e_i: np.ndarray
    s: np.ndarray
    e_u_q: Optional[np.ndarray] = None
    s_q: Optional[np.ndarray] = None
    quant: Optional[rvq_mod.QuantizeResult] = None
    user_cache: tuple = None
    item_cache: tuple = None
    main_cache: tuple = None
    main_q_cache: tuple = None


class RankingModel:
    """User tower, item tower and a shared main network producing one logit per row."""

    def __init__(self, user_tables, item_tables, tower: TowerConfig = None):
        self.tower_cfg = tower or TowerConfig()
        d = self.tower_cfg.user_embedding_dim
        hidden = self.tower_cfg.hidden_sizes
        self.user = Tower("user", user_tables, hidden, d)
        self.item = Tower("item", item_tables, hidden, d)
        self.main = MLP("main", [2 * d, *hidden, 1])

    @property
    def dim(self) -> int:
        return self.tower_cfg.user_embedding_dim

    def init_params(self, seed=0) -> ParamStore:
        rng = np.random.default_rng(seed)
        params = ParamStore()
        self.user.init(params, rng)
        self.item.init(params, rng)
        self.main.init(params, rng)
        return params

    def user_forward(self, x_u, params):
        return self.user.forward(params, x_u)[0]

    def item_forward(self, x_i, params):
        return self.item.forward(params, x_i)[0]

    def main_forward(self, e_u, e_i, params):
        return self._main(e_u, e_i, params)[0]

    def _main(self, e_u, e_i, params):
        if e_u.shape[0] != e_i.shape[0]:
            raise ShapeError(f"row counts differ: {e_u.shape[0]} vs {e_i.shape[0]}")
        out, cache = self.main.forward(params, np.concatenate([e_u, e_i], axis=1))
        return out[:, 0], cache

    def forward(self, x_u, x_i, params) -> ForwardTrace:
        """Original path only."""
        e_u, uc = self.user.forward(params, x_u)
        e_i, ic = self.item.forward(params, x_i)
        s, mc = self._main(e_u, e_i, params)
        return ForwardTrace(e_u=e_u, e_i=e_i, s=s, user_cache=uc, item_cache=ic, main_cache=mc)

    def dual_path_forward(self, x_u, x_i, params, rvq_state: rvq_mod.RvqState) -> ForwardTrace:
        trace = self.forward(x_u, x_i, params)
        q = rvq_mod.quantize(trace.e_u, rvq_state)
        trace.quant = q
        trace.e_u_q = rvq_mod.ste_combine(trace.e_u, q.reconstruction)
        # item embedding enters the quantized path as a constant
        trace.s_q, trace.main_q_cache = self._main(trace.e_u_q, trace.e_i, params)
        return trace

    def backward(self, params: ParamStore, trace: ForwardTrace, ds: np.ndarray,
                 ds_q: Optional[np.ndarray] = None) -> None:
        """Accumulate parameter gradients given d(loss)/ds and d(loss)/ds_q."""
        d = self.dim
        g = self.main.backward(params, trace.main_cache, ds.reshape(-1, 1))
        de_u = g[:, :d]
        de_i = g[:, d:]
        if ds_q is not None and trace.main_q_cache is not None:
            gq = self.main.backward(params, trace.main_q_cache, ds_q.reshape(-1, 1))
            # straight-through: identity Jacobian from e_u_q to e_u; item part dropped
            de_u = de_u + gq[:, :d]
        self.user.backward(params, trace.user_cache, de_u)
        self.item.backward(params, trace.item_cache, de_i)

