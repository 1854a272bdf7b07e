import numpy as np
import pytest

from grouprank import rvq
from grouprank.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from grouprank.config import ConfigError, RunConfig, dump_config, load_config, parse_config

from conftest import tiny_model


def test_defaults():
    cfg = RunConfig()
    assert (cfg.rvq.K, cfg.rvq.L, cfg.rvq.decay) == (8, 2, 0.99)
    assert cfg.train.batch_size == 256 and cfg.train.eval_every == 1000
    assert cfg.loss.objective == "groupce" and cfg.loss.listce_eps == 1e-12


def test_parse_and_round_trip():
    cfg = parse_config("""
        # comment
        rvq.K = 16          # trailing comment
        loss.lambda = 0.25
        loss.use_hierarchical = false
        tower.hidden_sizes = 32,16
        gen.positive_rate_band = 0.2,0.6
        data.csv = none
    """)
    assert cfg.rvq.K == 16 and cfg.loss.lambda_ == 0.25 and not cfg.loss.use_hierarchical
    assert cfg.tower.hidden_sizes == [32, 16]
    assert cfg.gen.positive_rate_band == (0.2, 0.6)
    assert cfg.data.csv is None
    assert parse_config(dump_config(cfg)) == cfg


@pytest.mark.parametrize("text,match", [
    ("rvq.KK = 3", "unknown key"),
    ("bogus.K = 3", "unknown section"),
    ("K = 3", "section prefix"),
    ("rvq.K", "expected"),
    ("rvq.K = many", "bad value"),
    ("rvq.K = 0", r"\[1, 1024\]"),
    ("rvq.L = 9", r"\[1, 8\]"),
    ("train.eval_every = 0", "eval_every"),
    ("loss.objective = hinge", "objective"),
    ("loss.use_hierarchical = maybe", "boolean"),
])
def test_config_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(text)


def test_error_reports_line_number(tmp_path):
    p = tmp_path / "c.conf"
    p.write_text("rvq.K = 4\nrvq.nope = 1\n")
    with pytest.raises(ConfigError, match=r"c.conf:2"):
        load_config(p)
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.conf")


def test_replace_dotted():
    cfg = RunConfig().replace(**{"rvq.K": 4, "train.seed": 9, "loss.lambda": 0.5})
    assert (cfg.rvq.K, cfg.train.seed, cfg.loss.lambda_) == (4, 9, 0.5)


def test_checkpoint_round_trip(tmp_path, rng):
    m = tiny_model()
    p = m.init_params(3)
    p.entries["main.l0.W"].adam_m[:] = 0.5
    p.step_count = 7
    st = rvq.init_codebooks(rng.normal(size=(20, 8)), 4, 2, seed=0)
    st.codebooks[1].ema_count[:] = [0.5, 1, 2, 3]
    save_checkpoint(tmp_path / "c.bin", p, st, {"config": "x"})
    p2, st2, meta = load_checkpoint(tmp_path / "c.bin")
    assert meta["config"] == "x" and p2.step_count == 7
    for k in p:
        np.testing.assert_array_equal(p[k], p2[k])
        np.testing.assert_array_equal(p.entries[k].adam_m, p2.entries[k].adam_m)
    for a, b in zip(st.codebooks, st2.codebooks):
        np.testing.assert_array_equal(a.vectors, b.vectors)
        np.testing.assert_array_equal(a.ema_count, b.ema_count)
    assert (st2.decay, st2.expire_threshold, st2.levels) == (0.99, 1.0, 2)


def test_checkpoint_without_quantizer(tmp_path):
    p = tiny_model().init_params(0)
    save_checkpoint(tmp_path / "c.bin", p, None, {})
    assert load_checkpoint(tmp_path / "c.bin")[1] is None


def test_checkpoint_corruption(tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(bad)
    p = tiny_model().init_params(0)
    save_checkpoint(tmp_path / "c.bin", p, None, {})
    (tmp_path / "t.bin").write_bytes((tmp_path / "c.bin").read_bytes() + b"xx")
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(tmp_path / "t.bin")
