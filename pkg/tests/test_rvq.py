import numpy as np
import pytest

from grouprank import rvq
from grouprank.rvq import Codebook, QuantizerStateError, RvqState


def _state(vectors_per_level, counts=None, decay=0.99):
    cbs = []
    for l, v in enumerate(vectors_per_level, start=1):
        v = np.asarray(v, dtype=float)
        c = np.ones(v.shape[0]) if counts is None else np.asarray(counts[l - 1], dtype=float)
        cbs.append(Codebook(l, v, c))
    return RvqState(cbs, decay=decay, initialized=True)


def test_quantize_worked_example():
    st = _state([[[0, 0], [1, 0]], [[0, 0.5], [0, -0.5]]])
    q = rvq.quantize(np.array([[0.9, 0.4]]), st)
    np.testing.assert_array_equal(q.codes, [[1, 0]])
    np.testing.assert_allclose(q.reconstruction, [[1.0, 0.5]])
    np.testing.assert_allclose(q.residual_trail[-1], [[-0.1, -0.1]])


def test_ties_go_to_lowest_index():
    st = _state([[[1.0, 0.0], [-1.0, 0.0]]])
    assert rvq.quantize(np.zeros((1, 2)), st).codes[0, 0] == 0


@pytest.mark.parametrize("L", [1, 2, 3, 4])
def test_telescoping(L, rng):
    e = rng.normal(size=(200, 6))
    st = rvq.init_codebooks(e, 5, L, seed=1)
    q = rvq.quantize(e, st)
    assert np.abs(e - q.reconstruction - q.residual_trail[-1]).max() < 1e-12
    assert len(q.residual_trail) == L + 1


def test_argmin_is_exhaustive_minimum(rng):
    e = rng.normal(size=(50, 3))
    st = rvq.init_codebooks(e, 6, 2, seed=0)
    q = rvq.quantize(e, st)
    for l, cb in enumerate(st.codebooks):
        r = q.residual_trail[l]
        d2 = ((r[:, None, :] - cb.vectors[None]) ** 2).sum(-1)
        chosen = d2[np.arange(len(r)), q.codes[:, l]]
        assert np.all(chosen <= d2.min(axis=1))


def test_quantize_is_pure(rng):
    e = rng.normal(size=(20, 4))
    st = rvq.init_codebooks(e, 3, 2, seed=0)
    before = st.copy()
    a, b = rvq.quantize(e, st), rvq.quantize(e, st)
    np.testing.assert_array_equal(a.codes, b.codes)
    for c0, c1 in zip(before.codebooks, st.codebooks):
        np.testing.assert_array_equal(c0.vectors, c1.vectors)


def test_translation_equivariance(rng):
    e = rng.normal(size=(40, 3))
    st = rvq.init_codebooks(e, 4, 1, seed=2)
    shift = np.array([3.0, -1.0, 0.5])
    shifted = _state([st.codebooks[0].vectors + shift])
    np.testing.assert_array_equal(rvq.quantize(e, st).codes, rvq.quantize(e + shift, shifted).codes)


def test_quantize_errors():
    with pytest.raises(QuantizerStateError):
        rvq.quantize(np.zeros((1, 2)), RvqState())
    st = _state([[[0.0, 0.0]]])
    with pytest.raises(QuantizerStateError):
        rvq.quantize(np.zeros((1, 3)), st)


def test_init_codebooks(rng):
    e = rng.normal(size=(30, 4))
    st = rvq.init_codebooks(e, 5, 3, seed=7)
    assert st.levels == 3 and st.dim == 4
    for cb in st.codebooks:
        np.testing.assert_array_equal(cb.ema_count, np.ones(5))
    rows = {tuple(r) for r in e}
    assert all(tuple(v) in rows for v in st.codebooks[0].vectors)
    # K larger than the batch: sampling with replacement still works
    assert rvq.init_codebooks(e[:2], 8, 1, seed=0).codebooks[0].size == 8
    with pytest.raises(ValueError):
        rvq.init_codebooks(e, 0, 1)


def test_ste_combine_forward_is_reconstruction(rng):
    e, r = rng.normal(size=(3, 2)), rng.normal(size=(3, 2))
    np.testing.assert_array_equal(rvq.ste_combine(e, r), r)
    with pytest.raises(ValueError):
        rvq.ste_combine(e, r[:2])


def test_ema_one_step_arithmetic():
    st = _state([[[0.0, 0.0], [5.0, 5.0]]], counts=[[1.0, 2.0]])
    trail = [np.array([[1.0, 1.0], [1.0, 1.0]])]
    rvq.ema_update(st, trail, np.array([[0], [0]]))
    cb = st.codebooks[0]
    np.testing.assert_allclose(cb.vectors[0], [0.01, 0.01])
    np.testing.assert_array_equal(cb.vectors[1], [5.0, 5.0])  # unassigned: vector unchanged
    np.testing.assert_allclose(cb.ema_count, [0.99 + 0.02, 1.98])


def test_ema_geometric_contraction(rng):
    v0 = rng.normal(size=(3, 4))
    st = _state([v0.copy()])
    r = rng.normal(size=(12, 4))
    codes = np.repeat(np.arange(3), 4)[:, None]
    mu = np.stack([r[codes[:, 0] == k].mean(0) for k in range(3)])
    e0 = np.linalg.norm(v0 - mu, axis=1)
    for t in range(1, 51):
        rvq.ema_update(st, [r], codes)
        np.testing.assert_allclose(np.linalg.norm(st.codebooks[0].vectors - mu, axis=1),
                                   0.99 ** t * e0, rtol=1e-10)
    assert np.all(st.codebooks[0].ema_count >= 0)


def test_smoothed_counts():
    cb = Codebook(1, np.zeros((2, 1)), np.array([3.0, 1.0]), smoothing_eps=1e-5)
    np.testing.assert_allclose(cb.smoothed_counts(), (np.array([3.0, 1.0]) + 1e-5) / (4 + 2e-5) * 4)


def test_expire_replaces_only_strictly_low_codes(rng):
    batch = rng.normal(size=(10, 2))
    st = _state([[[0.0, 0.0], [9.0, 9.0], [4.0, 4.0]]], counts=[[5.0, 0.0, 1.0]])
    st.codebooks[0].smoothing_eps = 0.0  # make "count exactly at threshold" exact
    before = st.codebooks[0].vectors.copy()
    st, expired = rvq.expire_codes(st, batch, seed=0)
    np.testing.assert_array_equal(expired[0], [1])
    cb = st.codebooks[0]
    assert tuple(cb.vectors[1]) in {tuple(b) for b in batch}
    np.testing.assert_array_equal(cb.vectors[[0, 2]], before[[0, 2]])
    np.testing.assert_array_equal(cb.ema_count, [5.0, 1.0, 1.0])


def test_expire_noop_when_healthy(rng):
    batch = rng.normal(size=(10, 2))
    st = _state([[[0.0, 0.0], [1.0, 1.0]]], counts=[[3.0, 3.0]])
    before = st.copy()
    st, expired = rvq.expire_codes(st, batch, seed=0)
    assert all(e.size == 0 for e in expired)
    np.testing.assert_array_equal(st.codebooks[0].vectors, before.codebooks[0].vectors)


def test_expire_deep_level_uses_residuals(rng):
    batch = rng.normal(size=(8, 2))
    st = _state([[[0.0, 0.0]], [[0.0, 0.0], [7.0, 7.0]]], counts=[[5.0], [5.0, 0.0]])
    st, expired = rvq.expire_codes(st, batch, seed=1)
    np.testing.assert_array_equal(expired[1], [1])
    residuals = batch - st.codebooks[0].vectors[0]
    assert tuple(st.codebooks[1].vectors[1]) in {tuple(r) for r in residuals}
    with pytest.raises(ValueError):
        rvq.expire_codes(st, np.zeros((0, 2)), seed=0)
