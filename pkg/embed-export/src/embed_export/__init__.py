"""Pooled transformer sentence features in the EMB1 container format."""
from .emb1 import write_embeddings
from .exporter import DEFAULT_MODEL, ExportResult, ExportSpec, export

__all__ = ["DEFAULT_MODEL", "ExportResult", "ExportSpec", "export", "write_embeddings"]
