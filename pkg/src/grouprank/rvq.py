"""Residual vector quantization of user embeddings with EMA-maintained codebooks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List

import numpy as np


class QuantizerStateError(RuntimeError):
    pass


@dataclass
class Codebook:
    level: int
    vectors: np.ndarray  # (K, d)
    ema_count: np.ndarray  # (K,)
    smoothing_eps: float = 1e-5

    @property
    def size(self) -> int:
        return self.vectors.shape[0]

    def smoothed_counts(self) -> np.ndarray:
        """Laplace-smoothed EMA counts; these drive expiration only."""
        total = self.ema_count.sum()
        k = self.size
        return (self.ema_count + self.smoothing_eps) / (total + k * self.smoothing_eps) * total


@dataclass
class RvqState:
    codebooks: List[Codebook] = field(default_factory=list)
    decay: float = 0.99
    expire_threshold: float = 1.0
    initialized: bool = False

    @property
    def levels(self) -> int:
        return len(self.codebooks)

    @property
    def dim(self) -> int:
        return self.codebooks[0].vectors.shape[1]

    def copy(self) -> "RvqState":
        return RvqState(
            [Codebook(c.level, c.vectors.copy(), c.ema_count.copy(), c.smoothing_eps) for c in self.codebooks],
            self.decay,
            self.expire_threshold,
            self.initialized,
        )


@dataclass
class QuantizeResult:
    codes: np.ndarray  # (n, L) int
    reconstruction: np.ndarray  # (n, d)
    residual_trail: List[np.ndarray]  # L + 1 arrays, residual_trail[0] is the input


def nearest_code(residual: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """argmin_k ||r - C_k||^2 per row; ties go to the lowest index (np.argmin)."""
    # Exact differences rather than the expanded ||r||^2 - 2 r.C + ||C||^2 form,
    # which can flip near-ties through cancellation.
    diff = residual[:, None, :] - vectors[None, :, :]
    return np.argmin(np.einsum("nkd,nkd->nk", diff, diff), axis=1)


def quantize(e_u: np.ndarray, state: RvqState) -> QuantizeResult:
    if not state.initialized:
        raise QuantizerStateError("quantizer codebooks are not initialized")
    e_u = np.asarray(e_u, dtype=np.float64)
    if e_u.ndim != 2 or e_u.shape[1] != state.dim:
        raise QuantizerStateError(f"embedding shape {e_u.shape} does not match codebook dim {state.dim}")
    residual = e_u
    trail = [residual]
    codes = np.empty((e_u.shape[0], state.levels), dtype=np.int64)
    recon = np.zeros_like(e_u)
    for l, cb in enumerate(state.codebooks):
        idx = nearest_code(residual, cb.vectors)
        chosen = cb.vectors[idx]
        codes[:, l] = idx
        recon = recon + chosen
        residual = residual - chosen
        trail.append(residual)
    return QuantizeResult(codes, recon, trail)


def ste_combine(e_u: np.ndarray, reconstruction: np.ndarray) -> np.ndarray:
    """Straight-through combination ``e_u + stop_grad(recon - e_u)``.

    The forward value is the reconstruction itself. Callers route the gradient of
    the result to ``e_u`` unchanged; codebooks never see it.
    """
    e_u = np.asarray(e_u, dtype=np.float64)
    reconstruction = np.asarray(reconstruction, dtype=np.float64)
    if e_u.shape != reconstruction.shape:
        raise ValueError(f"shape mismatch {e_u.shape} vs {reconstruction.shape}")
    return reconstruction.copy()


def init_codebooks(
    first_batch: np.ndarray,
    K: int,
    L: int,
    seed=0,
    decay: float = 0.99,
    expire_threshold: float = 1.0,
    smoothing_eps: float = 1e-5,
) -> RvqState:
    """Seed level 1 with K rows drawn (with replacement) from the batch, and each
    deeper level with rows of the residuals left by the levels above."""
    if K < 1 or L < 1:
        raise ValueError(f"K and L must be >= 1 (got K={K}, L={L})")
    x = np.asarray(first_batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError("need at least one embedding row to seed codebooks")
    rng = np.random.default_rng(seed)
    state = RvqState(decay=decay, expire_threshold=expire_threshold, initialized=True)
    residual = x
    for level in range(1, L + 1):
        idx = rng.integers(0, residual.shape[0], size=K)
        cb = Codebook(level, residual[idx].copy(), np.ones(K), smoothing_eps)
        state.codebooks.append(cb)
        residual = residual - cb.vectors[nearest_code(residual, cb.vectors)]
    return state


def ema_update(state: RvqState, residual_trail, codes) -> RvqState:
    """Move every assigned code toward the mean of its assigned residuals.

    ``C_k <- m C_k + (1 - m) mu_k`` and ``N_k <- m N_k + (1 - m) n_k`` for codes
    with at least one assignment; unassigned codes only have their count decayed.
    Mutates and returns ``state``.
    """
    m = state.decay
    codes = np.asarray(codes)
    for l, cb in enumerate(state.codebooks):
        r = residual_trail[l]
        K = cb.size
        onehot = np.zeros((r.shape[0], K))
        onehot[np.arange(r.shape[0]), codes[:, l]] = 1.0
        n = onehot.sum(axis=0)
        sums = onehot.T @ r
        hit = n > 0
        mu = sums[hit] / n[hit, None]
        cb.vectors[hit] = m * cb.vectors[hit] + (1.0 - m) * mu
        cb.ema_count = m * cb.ema_count + (1.0 - m) * n
    return state


def expire_codes(state: RvqState, batch_embeddings: np.ndarray, seed=None) -> tuple:
    """Replace codes whose smoothed count is strictly below the threshold.

    Level-1 replacements are batch embedding rows; deeper levels use the batch
    residuals at that level (computed with the already-refreshed shallower
    codebooks). Replaced codes get their EMA count reset to 1.

    Returns ``(state, expired)`` where ``expired`` lists the replaced code
    indices per level.
    """
    x = np.asarray(batch_embeddings, dtype=np.float64)
    if x.shape[0] < 1:
        raise ValueError("expiration needs a nonempty batch")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    dead_per_level = [np.flatnonzero(cb.smoothed_counts() < state.expire_threshold)
                      for cb in state.codebooks]
    # residuals are only needed down to the deepest level that has dead codes
    deepest = max((l for l, d in enumerate(dead_per_level) if d.size), default=-1)
    residual = x
    for l, (cb, dead) in enumerate(zip(state.codebooks, dead_per_level)):
        if l > deepest:
            break
        if dead.size:
            pick = rng.integers(0, residual.shape[0], size=dead.size)
            cb.vectors[dead] = residual[pick]
            cb.ema_count[dead] = 1.0
        if l < deepest:
            residual = residual - cb.vectors[nearest_code(residual, cb.vectors)]
    return state, dead_per_level
