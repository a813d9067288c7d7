"""hf-export command line: checkpoint directory/file -> container + manifest."""

from __future__ import annotations

import argparse
import sys

from .exporter import ExportError, ExportSpec, export_checkpoint


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hf-export",
        description="Convert an ML-ecosystem checkpoint into weightprov container format.",
    )
    parser.add_argument("--source", required=True, help="checkpoint file or directory")
    parser.add_argument(
        "--template",
        required=True,
        help="role template name (hf-llama, glu-mlp, plain-mlp) or template file path",
    )
    parser.add_argument("--n-heads", type=int, default=None)
    parser.add_argument("--out-dir", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    spec = ExportSpec(source=args.source, template=args.template, n_heads=args.n_heads)
    try:
        container, manifest = export_checkpoint(spec, args.out_dir)
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(container)
    print(manifest)
    return 0


if __name__ == "__main__":
    sys.exit(main())
