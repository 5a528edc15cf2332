"""Embedding file round-trips, splitting, and run-config parsing."""
from __future__ import annotations

import struct

import numpy as np
import pytest

from mmdmp.data_io import (
    ConfigError,
    EmbeddingFormatError,
    load_embeddings,
    load_labels,
    load_run_config,
    parse_run_config,
    save_embeddings,
    split,
)
from mmdmp.estimators import SampleSet

HEADER = 4 + 12  # magic + (version, n, d)


def write_raw(path, version=1, n=2, d=3, payload=None):
    body = payload if payload is not None else np.zeros((n, d), "<f4").tobytes()
    path.write_bytes(b"EMB1" + struct.pack("<III", version, n, d) + body)


def test_round_trip(tmp_path, rng):
    p = tmp_path / "e.emb"
    s = SampleSet(rng.normal(size=(17, 5)), label="P")
    save_embeddings(p, s)
    back = load_embeddings(p)
    assert back.data.dtype == np.float64
    # Storage is float32, so the round trip is exact at that precision.
    np.testing.assert_array_equal(back.data, s.data.astype(np.float32).astype(np.float64))
    assert back.label == "P"
    assert load_labels(p) == ["P"] * 17
    assert p.stat().st_size == HEADER + 4 * 17 * 5


def test_explicit_labels_sidecar(tmp_path, rng):
    p = tmp_path / "e.emb"
    s = SampleSet(rng.normal(size=(3, 2)))
    save_embeddings(p, s, labels=["P", "Q", "P"])
    assert load_labels(p) == ["P", "Q", "P"]
    assert load_embeddings(p).label == "mixed"
    with pytest.raises(ValueError, match="labels for"):
        save_embeddings(p, s, labels=["P"])


def test_no_sidecar_when_unlabeled(tmp_path, rng):
    p = tmp_path / "plain.emb"
    save_embeddings(p, SampleSet(rng.normal(size=(4, 2))))
    assert load_labels(p) is None
    assert load_embeddings(p).label == ""


def test_float32_overflow_rejected(tmp_path):
    p = tmp_path / "e.emb"
    s = SampleSet(np.array([[1.0, 2.0], [1e39, 0.0]]))
    with pytest.raises(EmbeddingFormatError, match="row 1"):
        save_embeddings(p, s)


def test_bad_magic(tmp_path):
    p = tmp_path / "e.emb"
    p.write_bytes(b"NOPE" + b"\x00" * 20)
    with pytest.raises(EmbeddingFormatError, match="bad magic"):
        load_embeddings(p)


def test_truncated_header(tmp_path):
    p = tmp_path / "e.emb"
    p.write_bytes(b"EMB1\x01\x00")
    with pytest.raises(EmbeddingFormatError, match="truncated header"):
        load_embeddings(p)


def test_bad_version(tmp_path):
    p = tmp_path / "e.emb"
    write_raw(p, version=2)
    with pytest.raises(EmbeddingFormatError, match="version 2"):
        load_embeddings(p)


def test_empty_rejected(tmp_path):
    p = tmp_path / "e.emb"
    write_raw(p, n=0, d=3, payload=b"")
    with pytest.raises(EmbeddingFormatError, match="empty"):
        load_embeddings(p)


def test_payload_size_mismatch(tmp_path):
    p = tmp_path / "e.emb"
    write_raw(p, n=2, d=3, payload=b"\x00" * 20)
    with pytest.raises(EmbeddingFormatError, match="payload size mismatch"):
        load_embeddings(p)


def test_non_finite_payload(tmp_path):
    p = tmp_path / "e.emb"
    data = np.zeros((3, 2), "<f4")
    data[2, 1] = np.nan
    write_raw(p, n=3, d=2, payload=data.tobytes())
    with pytest.raises(EmbeddingFormatError, match="row 2"):
        load_embeddings(p)


def test_sidecar_count_mismatch(tmp_path, rng):
    p = tmp_path / "e.emb"
    save_embeddings(p, SampleSet(rng.normal(size=(4, 2))))
    (tmp_path / "e.emb.labels").write_text("P\nQ\n")
    with pytest.raises(EmbeddingFormatError, match="sidecar"):
        load_embeddings(p)


# -- split ---------------------------------------------------------------------


def test_split_sizes_and_partition(rng):
    s = SampleSet(rng.normal(size=(10, 2)), label="P")
    a, b = split(s, [0.7, 0.3], seed=1)
    assert (a.n, b.n) == (7, 3)
    assert a.label == b.label == "P"
    merged = np.vstack([a.data, b.data])
    assert merged.shape == s.data.shape
    # Same multiset of rows, no duplication.
    assert sorted(map(tuple, merged)) == sorted(map(tuple, s.data))


def test_split_remainder_goes_to_largest_fraction(rng):
    s = SampleSet(rng.normal(size=(11, 2)))
    a, b, c = split(s, [0.5, 0.25, 0.25], seed=0)
    # floors are 5, 2, 2; fractional parts 0.5, 0.75, 0.75.
    assert (a.n, b.n, c.n) == (5, 3, 3)


def test_split_deterministic_and_seeded(rng):
    s = SampleSet(rng.normal(size=(20, 3)))
    a1, b1 = split(s, [0.5, 0.5], seed=4)
    a2, b2 = split(s, [0.5, 0.5], seed=4)
    np.testing.assert_array_equal(a1.data, a2.data)
    a3, _ = split(s, [0.5, 0.5], seed=5)
    assert not np.array_equal(a1.data, a3.data)


def test_split_shuffles(rng):
    s = SampleSet(np.arange(40, dtype=float).reshape(20, 2))
    a, _ = split(s, [0.5, 0.5], seed=0)
    assert not np.array_equal(a.data, s.data[:10])


def test_split_validation(rng):
    s = SampleSet(rng.normal(size=(4, 2)))
    with pytest.raises(ValueError, match="at least two"):
        split(s, [1.0])
    with pytest.raises(ValueError, match="positive"):
        split(s, [1.2, -0.2])
    with pytest.raises(ValueError, match="sum to 1"):
        split(s, [0.5, 0.4])
    with pytest.raises(ValueError, match="empty part"):
        split(s, [0.9, 0.05, 0.05])


# -- run config ------------------------------------------------------------------


def test_parse_run_config_happy_path():
    text = """
    # training block
    objective = mmd_mp
    lambda = 1e-8
    max_steps = 40   # inline comment
    train_featurizer = true
    train_epsilon = false
    mu = 0.5
    rng = philox
    """
    cfg = parse_run_config(text)
    assert cfg == {
        "objective": "mmd_mp",
        "lambda": 1e-8,
        "max_steps": 40,
        "train_featurizer": True,
        "train_epsilon": False,
        "mu": 0.5,
        "rng": "philox",
    }


def test_parse_run_config_errors():
    with pytest.raises(ConfigError, match="line 1: unknown configuration key 'typo'"):
        parse_run_config("typo = 3")
    with pytest.raises(ConfigError, match="line 2: duplicate"):
        parse_run_config("mu = 1\nmu = 2")
    with pytest.raises(ConfigError, match="line 1: bad value for 'max_steps'"):
        parse_run_config("max_steps = soon")
    with pytest.raises(ConfigError, match="bad value for 'train_epsilon'"):
        parse_run_config("train_epsilon = yes")
    with pytest.raises(ConfigError, match="expected 'key = value'"):
        parse_run_config("just words")
    with pytest.raises(ConfigError, match="unsupported rng"):
        parse_run_config("rng = mersenne")


def test_load_run_config(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("alpha = 0.05\nn_perm = 100\n")
    assert load_run_config(p) == {"alpha": 0.05, "n_perm": 100}
