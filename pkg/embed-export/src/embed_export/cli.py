"""Command-line front end: text file in, EMB1 file out."""
from __future__ import annotations

import argparse
import sys

from .exporter import DEFAULT_MODEL, POOLINGS, ExportSpec, export


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="embed-export",
        description="Export pooled transformer sentence features to an EMB1 embedding file",
    )
    ap.add_argument("--model", default=DEFAULT_MODEL,
                    help="encoder id or local checkpoint directory")
    ap.add_argument("--input", required=True, help="text file, one sentence per line")
    ap.add_argument("--pooling", choices=POOLINGS, default="mean")
    ap.add_argument("--max-tokens", type=int, default=100)
    ap.add_argument("--batch-size", type=int, default=16)
    ap.add_argument("--out", required=True, help="output embedding file")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        result = export(ExportSpec(
            input_path=args.input,
            out_path=args.out,
            model=args.model,
            pooling=args.pooling,
            max_tokens=args.max_tokens,
            batch_size=args.batch_size,
        ))
    except Exception as exc:
        print(f"embed-export: {exc}", file=sys.stderr)
        return 1
    if result.n_truncated:
        print(
            f"warning: {result.n_truncated} sentence(s) over {args.max_tokens} "
            "tokens were truncated",
            file=sys.stderr,
        )
    print(f"wrote {result.out_path}: {result.n_rows} rows x {result.dim}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
