"""Paired per-trace comparisons, bootstrap intervals, ECDFs, consistency.

The paired difference for a metric is ``delta = removed mean - retained
mean`` per trace; the confidence interval is a percentile bootstrap over
the per-trace deltas.  Resample r draws its indices from the Philox stream
keyed ``(seed, BOOTSTRAP + r)``, so identical (values, resamples, seed)
always give identical intervals and resamples may run in any order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .corpus import Corpus
from .rng import Stream, substream


@dataclass(frozen=True)
class PairedRow:
    """One metric's paired comparison across eligible traces."""

    metric: str
    removed_mean: float
    retained_mean: float
    frac_removed_lower: float
    frac_removed_higher: float  # ties counted in neither fraction
    ci_low: float
    ci_high: float
    eligible: int
    excluded: int  # traces where one group was absent


@dataclass(frozen=True)
class SelfConsistencyReport:
    phase_rate: float  # fraction of traces with a predicted removable suffix
    sentence_ratio: float  # mean fraction of sentences past the predicted boundary
    avg_len: float  # mean total sentence token count


def bootstrap_ci(
    deltas: np.ndarray, resamples: int, seed: int, level: float
) -> tuple[float, float]:
    """Percentile bootstrap CI of the mean of ``deltas``."""
    n = len(deltas)
    stats = np.empty(resamples, dtype=np.float64)
    for r in range(resamples):
        idx = substream(seed, Stream.BOOTSTRAP, r).integers(0, n, size=n)
        stats[r] = deltas[idx].mean()
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(stats, [alpha, 1.0 - alpha])
    return float(lo), float(hi)


def paired_row(
    metric: str,
    pairs: Sequence[tuple[Optional[float], Optional[float]]],
    resamples: int,
    seed: int,
    level: float = 0.95,
) -> PairedRow:
    """Build one paired-comparison row from per-trace (removed, retained) means.

    Traces with an absent group mean are excluded and counted.  Requires at
    least 2 eligible traces and ``resamples >= 100``.
    """
    if resamples < 100:
        raise ValueError(f"resamples must be >= 100, got {resamples}")
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must be in (0, 1), got {level}")
    eligible = [(r, k) for r, k in pairs if r is not None and k is not None]
    excluded = len(pairs) - len(eligible)
    if len(eligible) < 2:
        raise ValueError(
            f"metric {metric!r}: need >= 2 traces with both groups present, "
            f"got {len(eligible)}"
        )
    removed = np.array([r for r, _ in eligible], dtype=np.float64)
    retained = np.array([k for _, k in eligible], dtype=np.float64)
    deltas = removed - retained
    n = len(deltas)
    ci_low, ci_high = bootstrap_ci(deltas, resamples, seed, level)
    return PairedRow(
        metric=metric,
        removed_mean=float(removed.mean()),
        retained_mean=float(retained.mean()),
        frac_removed_lower=float((removed < retained).sum() / n),
        frac_removed_higher=float((removed > retained).sum() / n),
        ci_low=ci_low,
        ci_high=ci_high,
        eligible=n,
        excluded=excluded,
    )


def paired_table(
    per_trace_means: dict[str, Sequence[tuple[Optional[float], Optional[float]]]],
    resamples: int = 10_000,
    seed: int = 0,
    level: float = 0.95,
) -> list[PairedRow]:
    """Paired rows for several metrics, in input order."""
    return [
        paired_row(metric, pairs, resamples=resamples, seed=seed, level=level)
        for metric, pairs in per_trace_means.items()
    ]


def ecdf(values: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    """Empirical CDF step points: tie-merged sorted x, cumulative fraction."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("ecdf of empty sample")
    xs, counts = np.unique(arr, return_counts=True)
    fractions = np.cumsum(counts) / arr.size
    return xs, fractions


def self_consistency(
    predictions: dict[str, tuple[int, Sequence[int]]], corpus: Corpus
) -> SelfConsistencyReport:
    """Detector-based consistency rates of predicted removable suffixes.

    ``predictions`` maps trace id to (predicted boundary, per-sentence
    delete flags).  ``phase_rate`` counts traces whose boundary is before
    the end; ``sentence_ratio`` averages (T - c_hat)/T; ``avg_len`` is the
    mean total sentence token count over all traces.
    """
    if not corpus.traces:
        raise ValueError("empty corpus")
    missing = [t.id for t in corpus.traces if t.id not in predictions]
    if missing:
        raise ValueError(f"predictions missing for traces: {missing[:5]}")
    phase_hits = 0
    ratios = []
    lengths = []
    for trace in corpus.traces:
        c_hat, flags = predictions[trace.id]
        t_count = trace.num_sentences
        if not 0 <= c_hat <= t_count:
            raise ValueError(f"trace {trace.id}: boundary {c_hat} outside [0, {t_count}]")
        if len(flags) != t_count:
            raise ValueError(
                f"trace {trace.id}: got {len(flags)} delete flags for {t_count} sentences"
            )
        if c_hat < t_count:
            phase_hits += 1
        ratios.append((t_count - c_hat) / t_count)
        lengths.append(trace.total_tokens)
    return SelfConsistencyReport(
        phase_rate=phase_hits / len(corpus.traces),
        sentence_ratio=float(np.mean(ratios)),
        avg_len=float(np.mean(lengths)),
    )
