from __future__ import annotations

import struct

import numpy as np
import pytest

from embed_export.emb1 import MAGIC, VERSION, write_embeddings


def test_byte_layout(tmp_path):
    rows = np.array([[1.5, -2.0, 0.25], [0.0, 3.0, -0.5]])
    path = tmp_path / "t.emb1"
    write_embeddings(path, rows)
    buf = path.read_bytes()
    assert buf[:4] == MAGIC
    version, n, d = struct.unpack_from("<III", buf, 4)
    assert (version, n, d) == (VERSION, 2, 3)
    assert len(buf) == 16 + 4 * 2 * 3
    payload = np.frombuffer(buf, dtype="<f4", offset=16).reshape(2, 3)
    assert np.array_equal(payload, rows.astype(np.float32))


def test_rejects_non_2d(tmp_path):
    with pytest.raises(ValueError, match="2-d"):
        write_embeddings(tmp_path / "t.emb1", np.zeros(5))


def test_rejects_empty(tmp_path):
    with pytest.raises(ValueError, match="empty"):
        write_embeddings(tmp_path / "t.emb1", np.zeros((0, 4)))


def test_rejects_non_finite(tmp_path):
    rows = np.ones((3, 2))
    rows[1, 0] = np.inf
    with pytest.raises(ValueError, match="row 1"):
        write_embeddings(tmp_path / "t.emb1", rows)


def test_rejects_float32_overflow(tmp_path):
    # Finite in float64 but infinite once stored.
    rows = np.ones((2, 2))
    rows[0, 1] = 1e39
    with pytest.raises(ValueError, match="row 0"):
        write_embeddings(tmp_path / "t.emb1", rows)
