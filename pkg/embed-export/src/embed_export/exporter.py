"""Pooled sentence features from a frozen transformer encoder.

Reads one sentence per line, runs the encoder in inference mode, pools
its last hidden state to a single vector per sentence, and writes the
rows as an EMB1 file. Row order follows input order; blank lines are
dropped. Every batch is padded to the same fixed length, so a sentence's
row does not depend on what else shares its batch.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .emb1 import write_embeddings

DEFAULT_MODEL = "openai-community/roberta-base-openai-detector"
POOLINGS = ("mean", "cls")


@dataclass(frozen=True)
class ExportSpec:
    input_path: str
    out_path: str
    model: str = DEFAULT_MODEL
    pooling: str = "mean"
    max_tokens: int = 100
    batch_size: int = 16

    def __post_init__(self):
        if self.pooling not in POOLINGS:
            raise ValueError(f"pooling must be one of {POOLINGS}, got {self.pooling!r}")
        if self.max_tokens < 1:
            raise ValueError(f"max_tokens must be >= 1, got {self.max_tokens}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class ExportResult:
    n_rows: int
    dim: int
    n_truncated: int
    out_path: str


def read_sentences(path) -> list:
    """Non-empty lines of a text file, stripped, in file order."""
    sentences = [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines()]
    sentences = [s for s in sentences if s]
    if not sentences:
        raise ValueError(f"no non-empty lines in {path}")
    return sentences


def _load_encoder(name: str):
    from transformers import AutoModel, AutoTokenizer
    from transformers.utils import logging as hf_logging

    hf_logging.disable_progress_bar()
    try:
        tokenizer = AutoTokenizer.from_pretrained(name)
        model = AutoModel.from_pretrained(name)
    except Exception as exc:
        raise RuntimeError(f"could not load encoder {name!r}: {exc}") from exc
    model.eval()
    return tokenizer, model


def export(spec: ExportSpec) -> ExportResult:
    sentences = read_sentences(spec.input_path)
    tokenizer, model = _load_encoder(spec.model)
    torch.manual_seed(0)  # the encoder is frozen; this pins any stray sampling op

    over = tokenizer(sentences, truncation=False)["input_ids"]
    n_truncated = sum(1 for ids in over if len(ids) > spec.max_tokens)

    chunks = []
    with torch.no_grad():
        for start in range(0, len(sentences), spec.batch_size):
            batch = sentences[start : start + spec.batch_size]
            enc = tokenizer(
                batch,
                return_tensors="pt",
                padding="max_length",
                truncation=True,
                max_length=spec.max_tokens,
            )
            hidden = model(**enc).last_hidden_state
            if spec.pooling == "cls":
                rows = hidden[:, 0, :]
            else:
                mask = enc["attention_mask"].unsqueeze(-1).to(hidden.dtype)
                rows = (hidden * mask).sum(dim=1) / mask.sum(dim=1).clamp(min=1.0)
            chunks.append(rows.numpy().astype(np.float32))
    features = np.concatenate(chunks, axis=0)
    write_embeddings(spec.out_path, features)
    return ExportResult(
        n_rows=features.shape[0],
        dim=features.shape[1],
        n_truncated=n_truncated,
        out_path=str(spec.out_path),
    )
