"""Command-line entry point.

One binary, ten subcommands: ``validate``, ``synth``,
``diagnose-uncertainty``, ``diagnose-geometry``, ``paired-stats``,
``train``, ``predict``, ``cut``, ``export-sft``, ``self-consistency``.
Reports are CSV by default (``--json`` switches the delimited output to
JSON); diagnostic subcommands also render figures next to the tables
unless ``--no-figures`` is given.

Exit codes: 0 success, 1 data error, 2 usage error.  All randomness is
seeded from ``--seed``; identical inputs and flags produce byte-identical
outputs.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import report
from .corpus import Corpus, CorpusError, parse_corpus, validate_corpus, write_corpus
from .cutter import apply_cut, export_sft, random_cut
from .geometry import DEFAULT_EPSILON, GEOMETRY_METRICS, geometry_series, group_means
from .model import HccConfig, ModelError
from .stats import paired_table, self_consistency
from .synth import SynthConfig, describe, generate, parse_config as parse_synth_config
from .training import TrainingError, predict_corpus, train
from .uncertainty import boundary_quadruple, perturbation_stats, progressive_curves


class DataError(RuntimeError):
    """Input data or state prevented the command from running."""


def _load_kv_file(path: Path) -> dict[str, str]:
    out = {}
    for line_no, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"{path}:{line_no}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _hcc_config_from_file(path: Path | None, input_dim: int, seed: int) -> HccConfig:
    overrides: dict = {}
    if path is not None:
        raw = _load_kv_file(path)
        types = {f.name: f.type for f in fields(HccConfig)}
        for key, value in raw.items():
            if key not in types:
                raise DataError(f"{path}: unknown training config key {key!r}")
            kind = types[key]
            if kind == "int":
                overrides[key] = int(value)
            elif kind == "float":
                overrides[key] = float(value)
            else:
                overrides[key] = value
    if "input_dim" in overrides and overrides["input_dim"] != input_dim:
        raise DataError(
            f"config input_dim {overrides['input_dim']} does not match corpus dim {input_dim}"
        )
    overrides["input_dim"] = input_dim
    overrides.setdefault("seed", seed)
    return HccConfig(**overrides)


def _read_corpus(path: str) -> Corpus:
    return parse_corpus(Path(path), strict=True)


def _require_annotations(corpus: Corpus) -> None:
    if not corpus.annotations:
        raise DataError("corpus has no editor labels; this command needs an annotated corpus")


def _out_dir(args) -> Path:
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# subcommand bodies

def _cmd_validate(args) -> int:
    corpus = parse_corpus(Path(args.input), strict=False)
    problems = validate_corpus(corpus)
    count = sum(len(v) for v in problems.values())
    for trace_id in sorted(problems):
        for violation in problems[trace_id]:
            print(f"{trace_id}: {violation}")
    print(f"{count} violations")
    return 0 if count == 0 else 1


def _cmd_synth(args) -> int:
    if args.config:
        config = parse_synth_config(Path(args.config).read_text(encoding="utf-8"))
    else:
        config = SynthConfig()
    if args.count is not None:
        config = SynthConfig(**{**config.__dict__, "count": args.count})
    config = SynthConfig(**{**config.__dict__, "seed": args.seed})
    config.validate()
    corpus = generate(config)
    summary = write_corpus(corpus, Path(args.output))
    print(describe(config))
    print(f"wrote {summary['traces']} traces to {args.output}")
    return 0


def _cmd_diagnose_uncertainty(args) -> int:
    corpus = _read_corpus(args.input)
    _require_annotations(corpus)
    out = _out_dir(args)
    figures = not args.no_figures
    written = report.write_progressive_curves(
        progressive_curves(corpus, args.bins), out, args.bins, args.json, figures
    )
    written += report.write_boundary_quadruple(
        boundary_quadruple(corpus), out, args.json, figures
    )
    written += report.write_perturbations(perturbation_stats(corpus), out, args.json, figures)
    for path in written:
        print(f"wrote {path}")
    return 0


def _geometry_products(corpus: Corpus, epsilon: float):
    series_list = [geometry_series(trace, epsilon) for trace in corpus.traces]
    token_counts = {
        trace.id: [s.token_count for s in trace.sentences] for trace in corpus.traces
    }
    return series_list, token_counts


def _cmd_diagnose_geometry(args) -> int:
    corpus = _read_corpus(args.input)
    out = _out_dir(args)
    series_list, token_counts = _geometry_products(corpus, args.epsilon)
    written = [report.write_geometry_series(series_list, token_counts, out, args.json)]

    if corpus.annotations:
        means = [
            group_means(series, corpus.annotations[series.trace_id])
            for series in series_list
            if series.trace_id in corpus.annotations
        ]
        written.append(report.write_group_means(means, out, args.json))
        if not args.no_figures:
            groups: dict[str, dict[str, list[float]]] = {
                name: {"retained": [], "removed": []} for name in GEOMETRY_METRICS
            }
            for series in series_list:
                ann = corpus.annotations.get(series.trace_id)
                if ann is None:
                    continue
                c = ann.boundary
                for name in GEOMETRY_METRICS:
                    values = series.metric(name)
                    groups[name]["retained"].extend(v for v in values[:c] if not np.isnan(v))
                    groups[name]["removed"].extend(v for v in values[c:] if not np.isnan(v))
            arrays = {
                name: {g: np.asarray(v) for g, v in by_group.items()}
                for name, by_group in groups.items()
            }
            written += report.render_geometry_figures(series_list, arrays, out)
    for path in written:
        print(f"wrote {path}")
    return 0


def _cmd_paired_stats(args) -> int:
    corpus = _read_corpus(args.input)
    _require_annotations(corpus)
    out = _out_dir(args)
    pairs: dict[str, list] = {name: [] for name in GEOMETRY_METRICS}
    for trace, ann in corpus.annotated_traces():
        gm = group_means(geometry_series(trace, args.epsilon), ann)
        for name in GEOMETRY_METRICS:
            pairs[name].append((gm.removed[name], gm.retained[name]))
    table = paired_table(pairs, resamples=args.resamples, seed=args.seed)
    written = report.write_paired_table(table, out, args.json, not args.no_figures)
    for path in written:
        print(f"wrote {path}")
    return 0


def _cmd_train(args) -> int:
    corpus = _read_corpus(args.input)
    _require_annotations(corpus)
    out = _out_dir(args)
    config = _hcc_config_from_file(
        Path(args.config) if args.config else None, corpus.dim, args.seed
    )
    params, norm, history = train(corpus, config, epsilon=args.epsilon)
    model_path = out / "model.hccm"
    ckpt.save_checkpoint(params, config, norm, model_path)
    written = [model_path] + report.write_history(history, out, not args.no_figures)
    for path in written:
        print(f"wrote {path}")
    print(f"final losses: total={history[-1].total:.4f} cut={history[-1].cut:.4f}")
    return 0


def _cmd_predict(args) -> int:
    corpus = _read_corpus(args.input)
    params, config, norm = ckpt.load_checkpoint(Path(args.model))
    if config.input_dim != corpus.dim:
        raise DataError(
            f"checkpoint input_dim {config.input_dim} does not match corpus dim {corpus.dim}"
        )
    out = _out_dir(args)
    results = predict_corpus(params, corpus, config, norm)
    for path in report.write_predictions(results, out, args.json):
        print(f"wrote {path}")
    return 0


def _read_cut_boundaries(path: Path) -> dict[str, int]:
    with path.open("r", encoding="utf-8") as fh:
        return {row["trace_id"]: int(row["boundary"]) for row in csv.DictReader(fh)}


def _cmd_cut(args) -> int:
    corpus = _read_corpus(args.input)
    out = _out_dir(args)
    cuts = {}
    if args.mode == "labels":
        _require_annotations(corpus)
        missing = [t.id for t in corpus.traces if t.id not in corpus.annotations]
        if missing:
            raise DataError(f"traces without labels: {missing[:5]}")
        for trace in corpus.traces:
            cuts[trace.id] = apply_cut(trace, corpus.annotations[trace.id].boundary)
    elif args.mode == "model":
        if args.predictions:
            boundaries = {
                tid: c_hat for tid, (c_hat, _) in report.read_predictions(Path(args.predictions)).items()
            }
        elif args.model:
            params, config, norm = ckpt.load_checkpoint(Path(args.model))
            if config.input_dim != corpus.dim:
                raise DataError(
                    f"checkpoint input_dim {config.input_dim} does not match corpus dim {corpus.dim}"
                )
            boundaries = {r.trace_id: r.c_hat for r in predict_corpus(params, corpus, config, norm)}
        else:
            raise DataError("cut --mode model needs --model or --predictions")
        missing = [t.id for t in corpus.traces if t.id not in boundaries]
        if missing:
            raise DataError(f"predictions missing for traces: {missing[:5]}")
        for trace in corpus.traces:
            cuts[trace.id] = apply_cut(trace, boundaries[trace.id])
    else:  # random
        if args.target_tokens is not None:
            targets = {t.id: float(args.target_tokens) for t in corpus.traces}
        elif args.match_cuts:
            reference = _read_cut_boundaries(Path(args.match_cuts))
            missing = [t.id for t in corpus.traces if t.id not in reference]
            if missing:
                raise DataError(f"--match-cuts missing traces: {missing[:5]}")
            removed = {
                t.id: sum(s.token_count for s in t.sentences[reference[t.id]:])
                for t in corpus.traces
            }
            if args.per_trace:
                targets = {tid: float(v) for tid, v in removed.items()}
            else:
                avg = sum(removed.values()) / len(removed)
                targets = {t.id: avg for t in corpus.traces}
        else:
            raise DataError("cut --mode random needs --target-tokens or --match-cuts")
        for trace in corpus.traces:
            cuts[trace.id] = random_cut(trace, targets[trace.id], seed=args.seed)

    path = report.write_cut_summary(cuts, out, args.json)
    print(f"wrote {path}")
    return 0


def _cmd_export_sft(args) -> int:
    corpus = _read_corpus(args.input)
    boundaries = _read_cut_boundaries(Path(args.cuts))
    missing = [t.id for t in corpus.traces if t.id not in boundaries]
    if missing:
        raise DataError(f"cut summary missing traces: {missing[:5]}")
    cuts = {t.id: apply_cut(t, boundaries[t.id]) for t in corpus.traces}
    summary = export_sft(corpus, cuts, Path(args.output))
    print(
        f"wrote {summary['traces']} examples to {args.output} "
        f"(mean kept tokens {summary['mean_kept_tokens']:.2f})"
    )
    return 0


def _cmd_self_consistency(args) -> int:
    corpus = _read_corpus(args.input)
    predictions = report.read_predictions(Path(args.predictions))
    out = _out_dir(args)
    result = self_consistency(predictions, corpus)
    path = report.write_self_consistency(result, out, args.json)
    print(f"wrote {path}")
    print(
        f"phase_rate={result.phase_rate:.4f} sentence_ratio={result.sentence_ratio:.4f} "
        f"avg_len={result.avg_len:.2f}"
    )
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hcc",
        description="diagnose, learn, and cut post-conclusion continuation in CoT traces",
    )
    parser.add_argument("--threads", type=int, default=1,
                        help="upper bound on worker threads (default 1, deterministic baseline)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, output=True, seed=True):
        p.add_argument("--input", required=True, help="corpus manifest path")
        if output:
            p.add_argument("--output", required=True, help="output directory")
        if seed:
            p.add_argument("--seed", type=int, default=0)
        p.add_argument("--json", action="store_true", help="emit JSON instead of CSV")
        p.add_argument("--no-figures", action="store_true", help="skip figure rendering")

    p = sub.add_parser("validate", help="check every trace invariant")
    p.add_argument("--input", required=True)
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("synth", help="generate a synthetic annotated corpus")
    p.add_argument("--output", required=True, help="manifest path to write")
    p.add_argument("--config", help="key=value synthesis config file")
    p.add_argument("--count", type=int, help="trace count override")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("diagnose-uncertainty", help="binned curves, boundary stats, perturbations")
    common(p)
    p.add_argument("--bins", type=int, default=10)
    p.set_defaults(func=_cmd_diagnose_uncertainty)

    p = sub.add_parser("diagnose-geometry", help="per-sentence trajectory metrics")
    common(p)
    p.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
    p.set_defaults(func=_cmd_diagnose_geometry)

    p = sub.add_parser("paired-stats", help="paired removed-vs-retained table with bootstrap CIs")
    common(p)
    p.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
    p.add_argument("--resamples", type=int, default=10_000)
    p.set_defaults(func=_cmd_paired_stats)

    p = sub.add_parser("train", help="train the boundary proxy on an annotated corpus")
    common(p)
    p.add_argument("--config", help="key=value training config file")
    p.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("predict", help="predict boundaries with a trained checkpoint")
    common(p, seed=False)
    p.add_argument("--model", required=True, help="checkpoint path")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("cut", help="apply boundaries (model, labels, or random baseline)")
    common(p)
    p.add_argument("--mode", choices=("model", "labels", "random"), required=True)
    p.add_argument("--model", help="checkpoint path (mode=model)")
    p.add_argument("--predictions", help="predictions.csv from predict (mode=model)")
    p.add_argument("--target-tokens", type=float, help="removed-token target (mode=random)")
    p.add_argument("--match-cuts", help="cut_summary.csv whose removal length to match (mode=random)")
    p.add_argument("--per-trace", action="store_true",
                   help="match removal per trace instead of the corpus average")
    p.set_defaults(func=_cmd_cut)

    p = sub.add_parser("export-sft", help="write the processed prompt/response JSONL")
    p.add_argument("--input", required=True)
    p.add_argument("--cuts", required=True, help="cut_summary.csv from the cut subcommand")
    p.add_argument("--output", required=True, help="JSONL path to write")
    p.set_defaults(func=_cmd_export_sft)

    p = sub.add_parser("self-consistency", help="detector-based consistency rates")
    common(p, seed=False)
    p.add_argument("--predictions", required=True, help="predictions.csv from predict")
    p.set_defaults(func=_cmd_self_consistency)

    return parser


def run(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse handles --help (0) and usage errors (2)
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (CorpusError, DataError, ModelError, TrainingError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
