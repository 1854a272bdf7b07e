import re

import numpy as np
import pytest

from grouprank import rvq
from grouprank.model import EmbeddingTable, RankingModel, TowerConfig

# Acceptance criteria register their verdicts here; printed at the end of the run.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=_criterion_order):
            terminalreporter.write_line(line)


def _criterion_order(line):
    tag = line.split()[1]
    return int(re.match(r"\d+", tag).group()), tag


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def tiny_model(d=8, hidden=(6, 5), n_users=10, n_items=7, emb=4):
    return RankingModel([EmbeddingTable("user_id", n_users, emb)],
                        [EmbeddingTable("item_id", n_items, emb)],
                        TowerConfig(list(hidden), d))


def jitter_biases(params, rng, scale=0.1):
    """Zero-initialised biases put ReLU pre-activations exactly on the kink,
    where central differences are meaningless; move them off it."""
    for name in params:
        if name.endswith(".b"):
            params[name][:] = rng.normal(scale=scale, size=params[name].shape)


@pytest.fixture
def small_setup(rng):
    n = 32
    model = tiny_model()
    params = model.init_params(1)
    jitter_biases(params, rng)
    x_u = rng.integers(0, 10, (n, 1))
    x_i = rng.integers(0, 7, (n, 1))
    y = (rng.uniform(size=n) < 0.4).astype(float)
    state = rvq.init_codebooks(model.user_forward(x_u, params), 4, 2, seed=3)
    return model, params, x_u, x_i, y, state
