import numpy as np
import pytest

from grouprank.data import (DataError, GenConfig, SplitSpec, batch_iter, load_csv, read_manifest,
                            stratified_split, synthesize, synthesize_with_truth, write_csv,
                            write_manifest)


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_small_csv(tmp_path):
    p = _write(tmp_path, "user_id,item_id,label,u_age,i_cat\nbob,x,1,30,a\nann,y,0,30,b\nbob,y,1,40,a\n")
    ds = load_csv(p)
    assert len(ds) == 3
    assert ds.user_schema == [("user_id", 2), ("u_age", 2)]
    assert ds.item_schema == [("item_id", 2), ("i_cat", 2)]
    np.testing.assert_array_equal(ds.user_index, [0, 1, 0])
    np.testing.assert_array_equal(ds.labels, [1, 0, 1])
    assert ds.user_vocab == ["bob", "ann"]
    ds.validate()


@pytest.mark.parametrize("text,match", [
    ("user_id,item_id,label\na,b,2\n", ":2: label"),
    ("user_id,item_id\na,b\n", "missing required column 'label'"),
    ("user_id,item_id,label\na,b,1\na,b\n", ":3: expected 3 fields"),
    ("", "empty file"),
    ("user_id,item_id,label\n", "no data rows"),
])
def test_load_csv_errors(tmp_path, text, match):
    with pytest.raises(DataError, match=match):
        load_csv(_write(tmp_path, text))


def test_declared_column_must_exist(tmp_path):
    p = _write(tmp_path, "user_id,item_id,label\na,b,1\n")
    with pytest.raises(DataError, match="u_missing"):
        load_csv(p, user_columns=["user_id", "u_missing"])


def test_csv_round_trip_is_deterministic(tmp_path):
    ds = synthesize(GenConfig(users=50, items=20, impressions_per_user=200, seed=4))
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    write_csv(ds, a)
    x, y = load_csv(a), load_csv(a)
    write_csv(x, b)
    assert a.read_bytes() == b.read_bytes()
    np.testing.assert_array_equal(x.user_features, y.user_features)
    np.testing.assert_array_equal(x.labels, ds.labels)


def test_split_partitions_rows_and_respects_fractions():
    ds = synthesize(GenConfig())
    for seed in (0, 1):
        tr, va, te, flagged = stratified_split(ds, SplitSpec(seed=seed))
        allrows = np.concatenate([tr, va, te])
        assert allrows.size == len(ds) and np.unique(allrows).size == len(ds)
        for rows, frac in ((tr, 0.7), (va, 0.1), (te, 0.2)):
            assert abs(rows.size / len(ds) - frac) <= 0.02
        for rows in (tr, va, te):
            sub = ds.subset(rows)
            pos_users = set(sub.user_index[sub.labels == 1].tolist())
            counts = np.bincount(ds.user_index[ds.labels == 1], minlength=2000)
            eligible = set(np.flatnonzero(counts >= 3).tolist())
            assert eligible <= pos_users


def test_split_flags_users_with_few_positives():
    from grouprank.data import InteractionDataset
    users = np.array([0] * 5 + [1] * 12)
    labels = np.array([1, 0, 0, 0, 0] + [1] * 10 + [0, 0], dtype=np.int8)
    ds = InteractionDataset(users, np.arange(17), labels, users[:, None], np.arange(17)[:, None],
                            [("user_id", 2)], [("item_id", 17)])
    tr, va, te, flagged = stratified_split(ds, SplitSpec(seed=3))
    assert flagged == [0]
    assert 0 in tr  # the single positive of user 0 stays in train
    for rows in (tr, va, te):
        assert np.any((users[rows] == 1) & (labels[rows] == 1))
    with pytest.raises(DataError):
        stratified_split(ds.subset([]))


def test_split_spec_validation():
    with pytest.raises(ValueError):
        SplitSpec(0.5, 0.1, 0.1)


def test_manifest_round_trip(tmp_path):
    write_manifest(tmp_path / "m.txt", [3, 1, 2])
    np.testing.assert_array_equal(read_manifest(tmp_path / "m.txt"), [3, 1, 2])


def test_batch_iter():
    ds = synthesize(GenConfig(users=2, items=5, clusters=2, impressions_per_user=5))
    assert [len(b.rows) for b in batch_iter(ds, 4, shuffle=False)] == [4, 4, 2]
    a = np.concatenate([b.rows for b in batch_iter(ds, 3, seed=1)])
    b = np.concatenate([b.rows for b in batch_iter(ds, 3, seed=1)])
    c = np.concatenate([b.rows for b in batch_iter(ds, 3, seed=2)])
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    np.testing.assert_array_equal(np.sort(a), np.sort(c))
    with pytest.raises(ValueError):
        next(batch_iter(ds, 0))


def test_synthetic_noiseless_clusters_agree():
    cfg = GenConfig(users=40, items=30, clusters=2, noise=0.0, user_deviation=0.0,
                    user_bias_std=0.0, impressions_per_user=30, seed=5)
    ds = synthesize(cfg)
    cl = ds.ground_truth_cluster[ds.user_index]
    for c in (0, 1):
        for item in np.unique(ds.item_index[cl == c]):
            labs = ds.labels[(cl == c) & (ds.item_index == item)]
            assert labs.min() == labs.max()


def test_synthetic_defaults_and_determinism():
    cfg = GenConfig()
    ds, truth = synthesize_with_truth(cfg)
    assert len(ds) == 100_000 and ds.ground_truth_cluster.shape == (2000,)
    lo, hi = cfg.positive_rate_band
    assert lo <= ds.labels.mean() <= hi
    again = synthesize(cfg)
    np.testing.assert_array_equal(ds.labels, again.labels)
    other = synthesize(GenConfig(seed=1))
    assert not np.array_equal(ds.labels, other.labels)
    assert truth["logit"].shape == (100_000,)
    ds.validate()


def test_single_cluster_and_profile_feature():
    ds = synthesize(GenConfig(users=30, items=10, clusters=1, impressions_per_user=4, profile_noise=0.2))
    assert set(ds.ground_truth_cluster.tolist()) == {0}
    assert [n for n, _ in ds.user_schema] == ["user_id", "u_segment"]
    with pytest.raises(ValueError):
        GenConfig(users=2, clusters=3)
