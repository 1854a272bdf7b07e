"""Dense float64 building blocks: affine/sigmoid with explicit backward, a named
parameter store and AdamW."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator

import numpy as np


class ShapeError(ValueError):
    pass


class DivergenceError(RuntimeError):
    """Raised when a non-finite gradient or loss shows up during training."""


def as_matrix(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {a.shape}")
    return a


def affine(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """``x @ weight + bias`` with the bias broadcast over rows."""
    x, weight = as_matrix(x), as_matrix(weight)
    bias = np.asarray(bias, dtype=np.float64).reshape(-1)
    if x.shape[1] != weight.shape[0]:
        raise ShapeError(f"inner dimensions differ: {x.shape} @ {weight.shape}")
    if bias.shape[0] != weight.shape[1]:
        raise ShapeError(f"bias has {bias.shape[0]} entries, expected {weight.shape[1]}")
    return x @ weight + bias


def affine_backward(x, weight, dout, grad_weight=None, grad_bias=None) -> np.ndarray:
    """Accumulate into ``grad_weight``/``grad_bias`` (if given) and return d(input)."""
    if grad_weight is not None:
        grad_weight += x.T @ dout
    if grad_bias is not None:
        grad_bias += dout.sum(axis=0).reshape(grad_bias.shape)
    return dout @ weight.T


def sigmoid(s) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    out = np.empty_like(s)
    pos = s >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-s[pos]))
    e = np.exp(s[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid_backward(s, dout) -> np.ndarray:
    p = sigmoid(s)
    return dout * p * (1.0 - p)


def log_sigmoid(s) -> np.ndarray:
    """log(sigmoid(s)) without overflow: -softplus(-s)."""
    s = np.asarray(s, dtype=np.float64)
    return -softplus(-s)


def softplus(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, dout: np.ndarray) -> np.ndarray:
    return dout * (x > 0)


@dataclass
class Param:
    value: np.ndarray
    grad: np.ndarray = None
    adam_m: np.ndarray = None
    adam_v: np.ndarray = None

    def __post_init__(self):
        self.value = np.array(self.value, dtype=np.float64)
        for slot in ("grad", "adam_m", "adam_v"):
            if getattr(self, slot) is None:
                setattr(self, slot, np.zeros_like(self.value))


@dataclass
class ParamStore:
    """Named tensors, each with a gradient slot and Adam moments."""

    entries: Dict[str, Param] = field(default_factory=dict)
    step_count: int = 0

    def add(self, name: str, value) -> Param:
        if name in self.entries:
            raise KeyError(f"parameter {name!r} already exists")
        p = Param(value)
        self.entries[name] = p
        return p

    def __getitem__(self, name: str) -> np.ndarray:
        return self.entries[name].value

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __iter__(self) -> Iterator[str]:
        return iter(self.entries)

    def grad(self, name: str) -> np.ndarray:
        return self.entries[name].grad

    def zero_grad(self) -> None:
        for p in self.entries.values():
            p.grad.fill(0.0)

    def copy(self) -> "ParamStore":
        return ParamStore(
            {k: Param(p.value.copy(), p.grad.copy(), p.adam_m.copy(), p.adam_v.copy())
             for k, p in self.entries.items()},
            self.step_count,
        )

    def values(self) -> Dict[str, np.ndarray]:
        return {k: p.value for k, p in self.entries.items()}

    def grads(self) -> Dict[str, np.ndarray]:
        return {k: p.grad for k, p in self.entries.items()}


@dataclass
class OptimizerConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")


def adamw_step(params: ParamStore, cfg: OptimizerConfig) -> ParamStore:
    """One in-place AdamW update (decoupled weight decay, bias-corrected moments).

    Gradients are zeroed afterwards and ``step_count`` advances by one.
    """
    for name, p in params.entries.items():
        if not np.all(np.isfinite(p.grad)):
            raise DivergenceError(f"non-finite gradient in parameter {name!r}")
    t = params.step_count + 1
    lr, b1, b2 = cfg.learning_rate, cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p in params.entries.values():
        p.adam_m *= b1
        p.adam_m += (1.0 - b1) * p.grad
        p.adam_v *= b2
        p.adam_v += (1.0 - b2) * p.grad * p.grad
        m_hat = p.adam_m / c1
        v_hat = p.adam_v / c2
        if cfg.weight_decay:
            p.value *= 1.0 - lr * cfg.weight_decay
        p.value -= lr * m_hat / (np.sqrt(v_hat) + cfg.eps_adam)
        p.grad.fill(0.0)
    params.step_count = t
    return params


def finite_difference_gradient(
    loss_fn: Callable[[ParamStore], float], params: ParamStore, h: float = 1e-5
) -> Dict[str, np.ndarray]:
    """Central differences of ``loss_fn`` for every coordinate of every entry.

    Values are perturbed in place and restored; ``loss_fn`` must be deterministic.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    out = {}
    for name, p in params.entries.items():
        g = np.zeros_like(p.value)
        flat = p.value.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = loss_fn(params)
            flat[i] = orig - h
            fm = loss_fn(params)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
        out[name] = g
    return out


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """max |a - n| / max(|a|, |n|, floor), elementwise."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0
