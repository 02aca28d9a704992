"""Report emission: CSV/JSON tables plus rendered figures.

Every diagnostic subcommand writes delimited output (CSV by default, JSON
on request) and, unless figures are disabled, renders the matching
matplotlib figure next to it.  Floats are written with ``repr`` so files
round-trip exactly and reruns are byte-identical; figures are rendered at
a fixed DPI with pinned metadata for the same reason.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Mapping, Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .cutter import CutResult
from .geometry import GEOMETRY_METRICS, GeometrySeries, GroupGeometryMeans
from .model import LossBreakdown
from .stats import PairedRow, SelfConsistencyReport, ecdf
from .training import PredictionResult
from .uncertainty import (
    QUAD_METRICS,
    QUAD_POSITIONS,
    BinnedCurve,
    BoundaryQuadruple,
    PerturbationStats,
)

FIGURE_DPI = 110
_PNG_METADATA = {"Software": "hcc-toolkit"}

GROUP_COLORS = {"retained": "#1f77b4", "removed": "#d62728"}


def fmt(x) -> str:
    """Full-precision, locale-free float rendering ('nan' for missing)."""
    if x is None:
        return "nan"
    x = float(x)
    return repr(x)


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _save_figure(fig, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=FIGURE_DPI, metadata=_PNG_METADATA)
    plt.close(fig)


def _none_to_nan(value):
    return float("nan") if value is None else value


# ---------------------------------------------------------------------------
# uncertainty reports

def write_progressive_curves(
    curves: Sequence[BinnedCurve], out_dir: Path, bins: int, as_json: bool, figures: bool
) -> list[Path]:
    written = []
    rows = []
    payload = []
    for curve in curves:
        for b in range(bins):
            rows.append(
                [
                    curve.value,
                    curve.segment,
                    b,
                    fmt(b / bins),
                    fmt((b + 1) / bins),
                    fmt(curve.mean[b]),
                    fmt(curve.stderr[b]),
                    int(curve.count[b]),
                ]
            )
            payload.append(
                {
                    "value": curve.value,
                    "segment": curve.segment,
                    "bin": b,
                    "mean": None if np.isnan(curve.mean[b]) else float(curve.mean[b]),
                    "stderr": None if np.isnan(curve.stderr[b]) else float(curve.stderr[b]),
                    "count": int(curve.count[b]),
                    "empty": bool(curve.count[b] == 0),
                }
            )
    if as_json:
        path = out_dir / "progressive_curves.json"
        _write_json(path, payload)
    else:
        path = out_dir / "progressive_curves.csv"
        _write_csv(
            path,
            ["value", "segment", "bin", "position_low", "position_high", "mean", "stderr", "count"],
            rows,
        )
    written.append(path)

    if figures:
        fig, axes = plt.subplots(1, 2, figsize=(9, 3.6), sharex=True)
        centers = (np.arange(bins) + 0.5) / bins
        for ax, value, title in zip(
            axes, ("answer_entropy", "answer_nll"), ("Answer entropy", "Answer NLL")
        ):
            for curve in curves:
                if curve.value != value:
                    continue
                ok = curve.count > 0
                ax.errorbar(
                    centers[ok],
                    curve.mean[ok],
                    yerr=np.nan_to_num(curve.stderr[ok]),
                    marker="o",
                    ms=3,
                    capsize=2,
                    label=curve.segment,
                    color=GROUP_COLORS[curve.segment],
                )
            ax.set_title(title)
            ax.set_xlabel("normalized position in segment")
            ax.legend()
        fig.tight_layout()
        fig_path = out_dir / "progressive_curves.png"
        _save_figure(fig, fig_path)
        written.append(fig_path)
    return written


def write_boundary_quadruple(
    quad: BoundaryQuadruple, out_dir: Path, as_json: bool, figures: bool
) -> list[Path]:
    written = []
    rows = []
    payload = {"eligible_traces": quad.eligible_traces, "cells": {}}
    for metric in QUAD_METRICS:
        payload["cells"][metric] = {}
        for pos in QUAD_POSITIONS:
            cell = quad.cells[metric][pos]
            rows.append([metric, pos, fmt(cell.mean), fmt(cell.stderr), cell.count, cell.skipped])
            payload["cells"][metric][pos] = {
                "mean": None if np.isnan(cell.mean) else cell.mean,
                "stderr": None if np.isnan(cell.stderr) else cell.stderr,
                "count": cell.count,
                "skipped": cell.skipped,
            }
    if as_json:
        path = out_dir / "boundary_quadruple.json"
        _write_json(path, payload)
    else:
        path = out_dir / "boundary_quadruple.csv"
        _write_csv(path, ["metric", "position", "mean", "stderr", "count", "skipped"], rows)
    written.append(path)

    if figures:
        fig, axes = plt.subplots(2, 2, figsize=(8, 6), sharex=True)
        x = np.arange(len(QUAD_POSITIONS))
        for ax, metric in zip(axes.flat, QUAD_METRICS):
            means = [quad.cells[metric][p].mean for p in QUAD_POSITIONS]
            errs = [quad.cells[metric][p].stderr for p in QUAD_POSITIONS]
            ax.errorbar(x, means, yerr=np.nan_to_num(errs), marker="s", capsize=3, color="#333")
            ax.axvline(1.5, color="#999", ls="--", lw=1)  # boundary between KT and C1
            ax.set_xticks(x, QUAD_POSITIONS)
            ax.set_title(metric)
        fig.suptitle(f"boundary diagnostics over {quad.eligible_traces} traces")
        fig.tight_layout()
        fig_path = out_dir / "boundary_quadruple.png"
        _save_figure(fig, fig_path)
        written.append(fig_path)
    return written


def write_perturbations(
    stats: PerturbationStats, out_dir: Path, as_json: bool, figures: bool
) -> list[Path]:
    written = []
    rows = []
    payload = {"nll_perturbation": {}, "logprob_perturbation": {}}
    for kind, groups in (
        ("nll_perturbation", stats.nll_perturbation),
        ("logprob_perturbation", stats.logprob_perturbation),
    ):
        for group in ("retained", "removed"):
            values = groups[group]
            payload[kind][group] = [float(v) for v in values]
            rows.extend([kind, group, fmt(v)] for v in values)
    if as_json:
        path = out_dir / "perturbations.json"
        _write_json(path, payload)
    else:
        path = out_dir / "perturbations.csv"
        _write_csv(path, ["kind", "group", "value"], rows)
    written.append(path)

    if figures:
        fig, axes = plt.subplots(1, 2, figsize=(9, 3.6))
        for ax, (kind, groups) in zip(
            axes,
            (
                ("answer NLL perturbation", stats.nll_perturbation),
                ("answer logprob perturbation", stats.logprob_perturbation),
            ),
        ):
            for group in ("retained", "removed"):
                if len(groups[group]) == 0:
                    continue
                xs, fr = ecdf(groups[group])
                ax.step(xs, fr, where="post", label=group, color=GROUP_COLORS[group])
            ax.set_title(kind)
            ax.set_xlabel("per-sentence |change|")
            ax.set_ylabel("ECDF")
            ax.legend()
        fig.tight_layout()
        fig_path = out_dir / "perturbation_ecdf.png"
        _save_figure(fig, fig_path)
        written.append(fig_path)
    return written


# ---------------------------------------------------------------------------
# geometry reports

def write_geometry_series(
    series_list: Sequence[GeometrySeries],
    token_counts: Mapping[str, Sequence[int]],
    out_dir: Path,
    as_json: bool,
) -> Path:
    rows = []
    payload = []
    for series in series_list:
        tokens = token_counts[series.trace_id]
        for i in range(len(series.displacement)):
            record = {
                "trace_id": series.trace_id,
                "t": i + 1,
                "token_count": int(tokens[i]),
                **{name: float(series.metric(name)[i]) for name in GEOMETRY_METRICS},
            }
            if np.isnan(record["curvature"]):
                record["curvature"] = None
            payload.append(record)
            rows.append(
                [series.trace_id, i + 1, int(tokens[i])]
                + [fmt(series.metric(name)[i]) for name in GEOMETRY_METRICS]
            )
    if as_json:
        path = out_dir / "geometry_series.json"
        _write_json(path, payload)
    else:
        path = out_dir / "geometry_series.csv"
        _write_csv(path, ["trace_id", "t", "token_count", *GEOMETRY_METRICS], rows)
    return path


def write_group_means(
    means: Sequence[GroupGeometryMeans], out_dir: Path, as_json: bool
) -> Path:
    rows = []
    payload = []
    for gm in means:
        for group, values in (("retained", gm.retained), ("removed", gm.removed)):
            rows.append(
                [gm.trace_id, group] + [fmt(values[name]) for name in GEOMETRY_METRICS]
            )
            payload.append({"trace_id": gm.trace_id, "group": group, **values})
    if as_json:
        path = out_dir / "geometry_group_means.json"
        _write_json(path, payload)
    else:
        path = out_dir / "geometry_group_means.csv"
        _write_csv(path, ["trace_id", "group", *GEOMETRY_METRICS], rows)
    return path


def render_geometry_figures(
    series_list: Sequence[GeometrySeries],
    groups_by_sentence: Mapping[str, Mapping[str, np.ndarray]],
    out_dir: Path,
) -> list[Path]:
    """Per-sentence ECDF of displacement/token and displacement-vs-progress
    scatter, split by retained/removed."""
    written = []
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.8))
    ax = axes[0]
    for group in ("retained", "removed"):
        values = groups_by_sentence["disp_per_token"][group]
        if len(values) == 0:
            continue
        xs, fr = ecdf(values)
        ax.step(xs, fr, where="post", label=group, color=GROUP_COLORS[group])
    ax.set_xlabel("hidden displacement / token")
    ax.set_ylabel("ECDF")
    ax.set_title("token-normalized displacement")
    ax.legend()

    ax = axes[1]
    for group in ("retained", "removed"):
        xs = groups_by_sentence["displacement"][group]
        ys = groups_by_sentence["forward_progress"][group]
        ax.scatter(xs, ys, s=6, alpha=0.4, label=group, color=GROUP_COLORS[group])
    ax.set_xlabel("hidden displacement")
    ax.set_ylabel("forward progress")
    ax.set_title("displacement vs. progress")
    ax.legend()
    fig.tight_layout()
    path = out_dir / "geometry_overview.png"
    _save_figure(fig, path)
    written.append(path)
    return written


# ---------------------------------------------------------------------------
# paired table

def write_paired_table(
    table: Sequence[PairedRow], out_dir: Path, as_json: bool, figures: bool
) -> list[Path]:
    written = []
    header = [
        "metric", "removed_mean", "retained_mean", "frac_removed_lower",
        "frac_removed_higher", "ci_low", "ci_high", "eligible", "excluded",
    ]
    rows = [
        [
            r.metric, fmt(r.removed_mean), fmt(r.retained_mean), fmt(r.frac_removed_lower),
            fmt(r.frac_removed_higher), fmt(r.ci_low), fmt(r.ci_high), r.eligible, r.excluded,
        ]
        for r in table
    ]
    if as_json:
        path = out_dir / "paired_table.json"
        _write_json(
            path,
            [
                {
                    "metric": r.metric,
                    "removed_mean": r.removed_mean,
                    "retained_mean": r.retained_mean,
                    "frac_removed_lower": r.frac_removed_lower,
                    "frac_removed_higher": r.frac_removed_higher,
                    "ci_low": r.ci_low,
                    "ci_high": r.ci_high,
                    "eligible": r.eligible,
                    "excluded": r.excluded,
                }
                for r in table
            ],
        )
    else:
        path = out_dir / "paired_table.csv"
        _write_csv(path, header, rows)
    written.append(path)

    txt_path = out_dir / "paired_table.txt"
    written.append(txt_path)
    cols = ["metric", "removed", "retained", "rem. lower", "rem. higher", "95% CI"]
    lines = []
    body = [
        [
            r.metric,
            f"{r.removed_mean:.4g}",
            f"{r.retained_mean:.4g}",
            f"{r.frac_removed_lower:.2f}",
            f"{r.frac_removed_higher:.2f}",
            f"[{r.ci_low:.4g}, {r.ci_high:.4g}]",
        ]
        for r in table
    ]
    widths = [max(len(col), *(len(row[i]) for row in body)) for i, col in enumerate(cols)]
    lines.append("  ".join(col.ljust(w) for col, w in zip(cols, widths)))
    lines.append("  ".join("-" * w for w in widths))
    for row in body:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)))
    txt_path.parent.mkdir(parents=True, exist_ok=True)
    txt_path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    if figures:
        fig, ax = plt.subplots(figsize=(6.5, 0.6 * len(table) + 1.5))
        y = np.arange(len(table))[::-1]
        deltas = [r.removed_mean - r.retained_mean for r in table]
        err_low = [d - r.ci_low for d, r in zip(deltas, table)]
        err_high = [r.ci_high - d for d, r in zip(deltas, table)]
        ax.errorbar(deltas, y, xerr=[err_low, err_high], fmt="o", capsize=3, color="#333")
        ax.axvline(0.0, color="#999", ls="--", lw=1)
        ax.set_yticks(y, [r.metric for r in table])
        ax.set_xlabel("removed mean - retained mean (95% CI)")
        fig.tight_layout()
        fig_path = out_dir / "paired_deltas.png"
        _save_figure(fig, fig_path)
        written.append(fig_path)
    return written


# ---------------------------------------------------------------------------
# training / prediction / cutting artifacts

def write_history(history: Sequence[LossBreakdown], out_dir: Path, figures: bool) -> list[Path]:
    written = []
    path = out_dir / "training_history.csv"
    _write_csv(
        path,
        ["epoch", "cut", "delete", "kl", "ent", "geo", "total"],
        [
            [i, fmt(h.cut), fmt(h.delete), fmt(h.kl), fmt(h.ent), fmt(h.geo), fmt(h.total)]
            for i, h in enumerate(history)
        ],
    )
    written.append(path)
    if figures:
        fig, ax = plt.subplots(figsize=(6.5, 3.6))
        epochs = np.arange(len(history))
        ax.plot(epochs, [h.total for h in history], label="total", color="#111")
        ax.plot(epochs, [h.cut for h in history], label="cut", color="#1f77b4")
        ax.plot(epochs, [h.delete for h in history], label="delete", color="#d62728")
        ax.set_xlabel("epoch")
        ax.set_ylabel("mean loss per trace")
        ax.set_yscale("log")
        ax.legend()
        fig.tight_layout()
        fig_path = out_dir / "training_history.png"
        _save_figure(fig, fig_path)
        written.append(fig_path)
    return written


def write_predictions(results: Sequence[PredictionResult], out_dir: Path, as_json: bool) -> list[Path]:
    written = []
    if as_json:
        path = out_dir / "predictions.json"
        _write_json(
            path,
            [
                {
                    "trace_id": r.trace_id,
                    "c_hat": r.c_hat,
                    "num_sentences": r.num_sentences,
                    "delete_probs": [float(p) for p in r.delete_probs],
                    "t_hat": [float(v) for v in r.t_hat],
                    "g_hat": [float(v) for v in r.g_hat],
                }
                for r in results
            ],
        )
        written.append(path)
        return written
    path = out_dir / "predictions.csv"
    _write_csv(
        path,
        ["trace_id", "c_hat", "num_sentences"],
        [[r.trace_id, r.c_hat, r.num_sentences] for r in results],
    )
    written.append(path)
    detail = out_dir / "predictions_sentences.csv"
    rows = []
    for r in results:
        for i in range(r.num_sentences):
            rows.append(
                [r.trace_id, i + 1, fmt(r.delete_probs[i]), fmt(r.t_hat[i]), fmt(r.g_hat[i])]
            )
    _write_csv(detail, ["trace_id", "t", "delete_prob", "t_hat", "g_hat"], rows)
    written.append(detail)
    return written


def read_predictions(path: Path) -> dict[str, tuple[int, list[int]]]:
    """Load (c_hat, delete flags) per trace from predict's CSV pair."""
    main = {}
    with path.open("r", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            main[row["trace_id"]] = (int(row["c_hat"]), int(row["num_sentences"]))
    detail_path = path.parent / "predictions_sentences.csv"
    flags: dict[str, list[int]] = {tid: [0] * t for tid, (_, t) in main.items()}
    if detail_path.exists():
        with detail_path.open("r", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                flags[row["trace_id"]][int(row["t"]) - 1] = int(float(row["delete_prob"]) > 0.5)
    else:
        for tid, (c_hat, t) in main.items():
            flags[tid] = [0 if i + 1 <= c_hat else 1 for i in range(t)]
    return {tid: (c_hat, flags[tid]) for tid, (c_hat, _) in main.items()}


def write_cut_summary(cuts: Mapping[str, CutResult], out_dir: Path, as_json: bool) -> Path:
    ordered = [cuts[k] for k in sorted(cuts)]
    if as_json:
        path = out_dir / "cut_summary.json"
        _write_json(
            path,
            [
                {
                    "trace_id": c.trace_id,
                    "boundary": c.boundary,
                    "kept_sentences": c.kept_sentences,
                    "removed_sentences": c.removed_sentences,
                    "removed_tokens": c.removed_tokens,
                }
                for c in ordered
            ],
        )
        return path
    path = out_dir / "cut_summary.csv"
    _write_csv(
        path,
        ["trace_id", "boundary", "kept_sentences", "removed_sentences", "removed_tokens"],
        [
            [c.trace_id, c.boundary, c.kept_sentences, c.removed_sentences, c.removed_tokens]
            for c in ordered
        ],
    )
    return path


def write_self_consistency(report: SelfConsistencyReport, out_dir: Path, as_json: bool) -> Path:
    if as_json:
        path = out_dir / "self_consistency.json"
        _write_json(
            path,
            {
                "phase_rate": report.phase_rate,
                "sentence_ratio": report.sentence_ratio,
                "avg_len": report.avg_len,
            },
        )
        return path
    path = out_dir / "self_consistency.csv"
    _write_csv(
        path,
        ["phase_rate", "sentence_ratio", "avg_len"],
        [[fmt(report.phase_rate), fmt(report.sentence_ratio), fmt(report.avg_len)]],
    )
    return path
