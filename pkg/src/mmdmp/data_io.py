"""Embedding file format, sample splitting, and run configuration parsing.

Embedding files carry float32 row-major features behind a 16-byte header
(magic "EMB1", format version, n, d, all little-endian u32 after the magic).
Storage is 32-bit; everything loads into 64-bit for computation. An optional
"<path>.labels" sidecar holds one population label per row.

Run configuration is a flat "key = value" text format with a fixed key
schema; unknown keys are rejected so typos fail loudly.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .estimators import SampleSet

EMB_MAGIC = b"EMB1"
EMB_VERSION = 1
_HEADER = struct.Struct("<III")


class EmbeddingFormatError(ValueError):
    pass


class ConfigError(ValueError):
    pass


def _labels_path(path) -> Path:
    return Path(str(path) + ".labels")


def save_embeddings(path, s: SampleSet, labels: list | None = None) -> None:
    """Write a SampleSet as an embedding file (lossy: float32 storage).

    labels, when given, must have one entry per row and go to the sidecar;
    otherwise a non-empty SampleSet label is written for every row.
    """
    n, d = s.n, s.dim
    with np.errstate(over="ignore"):  # overflow is caught by the check below
        data32 = s.data.astype("<f4")
    if not np.all(np.isfinite(data32)):
        bad = int(np.argwhere(~np.isfinite(data32))[0][0])
        raise EmbeddingFormatError(f"row {bad} becomes non-finite in float32 storage")
    with open(path, "wb") as fh:
        fh.write(EMB_MAGIC)
        fh.write(_HEADER.pack(EMB_VERSION, n, d))
        fh.write(data32.tobytes(order="C"))
    if labels is not None:
        if len(labels) != n:
            raise ValueError(f"got {len(labels)} labels for {n} rows")
        _labels_path(path).write_text("".join(f"{lab}\n" for lab in labels), encoding="utf-8")
    elif s.label:
        _labels_path(path).write_text(f"{s.label}\n" * n, encoding="utf-8")


def load_labels(path) -> list | None:
    """Per-row labels from the sidecar, or None when there is no sidecar."""
    lp = _labels_path(path)
    if not lp.exists():
        return None
    return lp.read_text(encoding="utf-8").splitlines()


def load_embeddings(path) -> SampleSet:
    """Read an embedding file into a float64 SampleSet.

    The SampleSet label comes from the sidecar when all rows agree, and is
    "mixed" when they do not.
    """
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 4 or buf[:4] != EMB_MAGIC:
        got = buf[:4] if len(buf) >= 4 else buf
        raise EmbeddingFormatError(f"bad magic: expected {EMB_MAGIC!r}, got {got!r}")
    if len(buf) < 4 + _HEADER.size:
        raise EmbeddingFormatError(
            f"truncated header: expected {4 + _HEADER.size} bytes, file has {len(buf)}"
        )
    version, n, d = _HEADER.unpack_from(buf, 4)
    if version != EMB_VERSION:
        raise EmbeddingFormatError(f"unsupported format version {version}, expected {EMB_VERSION}")
    if n < 1 or d < 1:
        raise EmbeddingFormatError(f"empty embedding file rejected: n={n}, d={d}")
    expected = 4 + _HEADER.size + 4 * n * d
    if len(buf) != expected:
        raise EmbeddingFormatError(
            f"payload size mismatch: expected {expected} bytes for n={n}, d={d}, "
            f"file has {len(buf)}"
        )
    data = np.frombuffer(buf, dtype="<f4", offset=4 + _HEADER.size).reshape(n, d)
    finite = np.isfinite(data).all(axis=1)
    if not finite.all():
        raise EmbeddingFormatError(f"non-finite value in row {int(np.flatnonzero(~finite)[0])}")

    label = ""
    labels = load_labels(path)
    if labels is not None:
        if len(labels) != n:
            raise EmbeddingFormatError(f"sidecar has {len(labels)} labels for {n} rows")
        label = labels[0] if len(set(labels)) == 1 else "mixed"
    return SampleSet(data=data.astype(np.float64), label=label)


def split(s: SampleSet, fractions, seed: int = 0) -> tuple:
    """Shuffle rows and split by fractions (must sum to 1, each > 0).

    Sizes are floor(f * n) with the remainder distributed by largest
    fractional part; every part must end up non-empty.
    """
    fractions = [float(f) for f in fractions]
    if len(fractions) < 2:
        raise ValueError("split needs at least two fractions")
    if any(f <= 0.0 for f in fractions):
        raise ValueError(f"fractions must be positive, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got sum {sum(fractions)}")
    raw = [f * s.n for f in fractions]
    sizes = [int(np.floor(r)) for r in raw]
    short = s.n - sum(sizes)
    # Largest fractional parts get the remaining rows, ties to earlier parts.
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in order[:short]:
        sizes[i] += 1
    if any(k == 0 for k in sizes):
        raise ValueError(f"split produces an empty part: sizes {sizes} from n={s.n}")
    perm = rngmod.stream(seed, rngmod.SPLIT).permutation(s.n)
    out = []
    start = 0
    for k in sizes:
        out.append(SampleSet(data=s.data[perm[start : start + k]], label=s.label))
        start += k
    return tuple(out)


# -- run configuration --------------------------------------------------------

def _parse_bool(raw: str) -> bool:
    if raw == "true":
        return True
    if raw == "false":
        return False
    raise ValueError(f"expected true/false, got {raw!r}")


_SCHEMA: dict[str, type | object] = {
    # training
    "objective": str,
    "lambda": float,
    "learning_rate": float,
    "max_steps": int,
    "batch_size": int,
    "seed": int,
    "adam_beta1": float,
    "adam_beta2": float,
    "adam_eps": float,
    "subsample_policy": str,
    # testing
    "alpha": float,
    "n_perm": int,
    "statistic": str,
    # synthetic mixture
    "mu": float,
    "delta": float,
    "dim": int,
    "q_centers": int,
    "test_center": int,
    # kernel constants and trainability
    "epsilon": float,
    "sigma_phi": float,
    "sigma_q": float,
    "train_epsilon": _parse_bool,
    "train_sigma_phi": _parse_bool,
    "train_sigma_q": _parse_bool,
    "train_featurizer": _parse_bool,
    # generator name; only one is implemented
    "rng": str,
}


def parse_run_config(text: str) -> dict:
    """Parse "key = value" lines; blank lines and # comments are fine."""
    out: dict = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw_line!r}")
        key, _, raw = line.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key not in _SCHEMA:
            raise ConfigError(f"line {lineno}: unknown configuration key {key!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            out[key] = _SCHEMA[key](raw)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from exc
    if out.get("rng", rngmod.GENERATOR_NAME) != rngmod.GENERATOR_NAME:
        raise ConfigError(f"unsupported rng {out['rng']!r}, only {rngmod.GENERATOR_NAME!r}")
    return out


def load_run_config(path) -> dict:
    return parse_run_config(Path(path).read_text(encoding="utf-8"))
