"""Command-line entry point: raw JSONL traces -> corpus manifest + sidecar."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .scoring import ExtractionConfig, ExtractionError, extract, read_raw_traces
from .segmentation import SegmentationError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hcc-extract",
        description="score raw CoT traces with a frozen causal LM and emit a feature corpus",
    )
    parser.add_argument("--input", required=True, help="raw traces JSONL: {id, question, reasoning, answer}")
    parser.add_argument("--output", required=True, help="corpus manifest path to write")
    parser.add_argument("--model", required=True, help="evaluator model id or local path")
    parser.add_argument("--layer", type=int, default=-1, help="hidden-state layer (-1 = final)")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--batch-size", type=int, default=1)
    parser.add_argument("--rule", default="simple-v1", help="sentence-splitting rule id")
    parser.add_argument("--source", default="extracted", help="source tag for the manifest header")
    return parser


def run(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.batch_size < 1:
        print("error: --batch-size must be >= 1", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    config = ExtractionConfig(
        model=args.model, layer=args.layer, device=args.device,
        batch_size=args.batch_size, rule=args.rule, source=args.source,
    )
    try:
        raws = read_raw_traces(Path(args.input))
        summary = extract(raws, config, Path(args.output))
    except (ExtractionError, SegmentationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(
        f"wrote {summary['traces']} traces ({summary['rows']} hidden rows) to "
        f"{summary['manifest']}; skipped {summary['skipped']}"
    )
    return 0


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
