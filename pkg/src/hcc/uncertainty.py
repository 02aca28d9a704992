"""Uncertainty diagnostics over sentences and answer-conditional prefixes.

Per-sentence scores are token-averaged negative log-likelihood and
predictive entropy.  Answer-side scores track how each added sentence
changes recovery of the final answer: ``delta_ans(t)`` is the drop in
token-averaged answer NLL when sentence t is appended to the prefix, so a
positive value means the sentence made the answer easier to recover.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .corpus import Corpus, EditorAnnotation, SentenceRecord, TraceRecord

QUAD_POSITIONS = ("K1", "KT", "C1", "CT")  # first/last retained, first/last removed
QUAD_METRICS = ("sent_entropy", "entropy_change", "sent_nll", "delta_ans_change")


@dataclass(frozen=True)
class UncertaintySeries:
    """Per-sentence uncertainty values for one trace (arrays of length T)."""

    trace_id: str
    sent_nll: np.ndarray
    sent_entropy: np.ndarray
    answer_nll: np.ndarray  # NLL_ans(P_t) for t = 1..T
    answer_entropy: np.ndarray
    delta_ans: np.ndarray  # answer_nll(P_{t-1}) - answer_nll(P_t)


@dataclass(frozen=True)
class BinnedCurve:
    """Binned means of one value over normalized within-segment positions."""

    value: str
    segment: str  # "retained" | "removed"
    mean: np.ndarray  # per bin; NaN where empty
    count: np.ndarray
    stderr: np.ndarray  # NaN where count < 2


@dataclass(frozen=True)
class QuadCell:
    mean: float
    stderr: float
    count: int
    skipped: int  # traces lacking the previous-sentence value this cell needs


@dataclass(frozen=True)
class BoundaryQuadruple:
    """Mean +- standard error of four diagnostics at K1, KT, C1, CT.

    Only traces with 0 < c* < T contribute (all four positions must
    exist).  ``cells[metric][position]`` is a ``QuadCell``.
    """

    eligible_traces: int
    cells: dict[str, dict[str, QuadCell]]


def sentence_uncertainty(sentence: SentenceRecord) -> tuple[float, float]:
    """Token-averaged (NLL, entropy) of one sentence."""
    if sentence.token_count < 1:
        raise ValueError(f"sentence {sentence.index} has no tokens")
    nll = -float(np.mean(sentence.logprobs))
    entropy = float(np.mean(sentence.entropies))
    return nll, entropy


def uncertainty_series(trace: TraceRecord) -> UncertaintySeries:
    """All per-sentence uncertainty values for one trace.

    The deltas telescope: their sum equals answer_nll(P_0) - answer_nll(P_T).
    """
    per_sentence = [sentence_uncertainty(s) for s in trace.sentences]
    sent_nll = np.array([v[0] for v in per_sentence], dtype=np.float64)
    sent_entropy = np.array([v[1] for v in per_sentence], dtype=np.float64)
    ans_nll_all = trace.answer_nll_by_prefix()  # indices 0..T
    ans_ent_all = trace.answer_entropy_by_prefix()
    return UncertaintySeries(
        trace_id=trace.id,
        sent_nll=sent_nll,
        sent_entropy=sent_entropy,
        answer_nll=ans_nll_all[1:].copy(),
        answer_entropy=ans_ent_all[1:].copy(),
        delta_ans=ans_nll_all[:-1] - ans_nll_all[1:],
    )


def segment_positions(length: int) -> np.ndarray:
    """Normalized positions of a segment's sentences: (rank-1)/(len-1)."""
    if length < 1:
        return np.zeros(0, dtype=np.float64)
    if length == 1:
        return np.zeros(1, dtype=np.float64)
    return np.arange(length, dtype=np.float64) / (length - 1)


def assign_bin(position: float, bins: int) -> int:
    """Left-closed bins over [0, 1]; the final bin also takes position 1."""
    return min(int(position * bins), bins - 1)


def _segment_slices(annotation: EditorAnnotation, t_count: int):
    # retained = sentences 1..c*, removed = c*+1..T (either may be empty)
    c = annotation.boundary
    return {"retained": slice(0, c), "removed": slice(c, t_count)}


def progressive_curves(corpus: Corpus, bins: int) -> list[BinnedCurve]:
    """Binned answer entropy / answer NLL vs. normalized position.

    Positions are normalized separately inside the retained and removed
    segments of each annotated trace; every eligible sentence lands in
    exactly one bin.
    """
    if bins < 2:
        raise ValueError(f"bins must be >= 2, got {bins}")
    annotated = corpus.annotated_traces()
    if not annotated:
        raise ValueError("corpus has no annotated traces")

    sums: dict[tuple[str, str], np.ndarray] = {}
    sq_sums: dict[tuple[str, str], np.ndarray] = {}
    counts: dict[tuple[str, str], np.ndarray] = {}
    for value in ("answer_entropy", "answer_nll"):
        for segment in ("retained", "removed"):
            key = (value, segment)
            sums[key] = np.zeros(bins)
            sq_sums[key] = np.zeros(bins)
            counts[key] = np.zeros(bins, dtype=np.int64)

    for trace, annotation in annotated:
        series = uncertainty_series(trace)
        values = {"answer_entropy": series.answer_entropy, "answer_nll": series.answer_nll}
        for segment, sl in _segment_slices(annotation, trace.num_sentences).items():
            seg_len = sl.stop - sl.start
            if seg_len == 0:
                continue
            positions = segment_positions(seg_len)
            for value, arr in values.items():
                seg_values = arr[sl]
                for pos, v in zip(positions, seg_values):
                    b = assign_bin(pos, bins)
                    sums[(value, segment)][b] += v
                    sq_sums[(value, segment)][b] += v * v
                    counts[(value, segment)][b] += 1

    curves = []
    for (value, segment), total in sums.items():
        n = counts[(value, segment)]
        with np.errstate(invalid="ignore", divide="ignore"):
            mean = np.where(n > 0, total / np.maximum(n, 1), np.nan)
            var = np.where(
                n > 1,
                (sq_sums[(value, segment)] - n * mean**2) / np.maximum(n - 1, 1),
                np.nan,
            )
            stderr = np.sqrt(np.maximum(var, 0.0) / np.maximum(n, 1))
            stderr = np.where(n > 1, stderr, np.nan)
        curves.append(BinnedCurve(value=value, segment=segment, mean=mean, count=n, stderr=stderr))
    return curves


def _quad_indices(boundary: int, t_count: int) -> dict[str, int]:
    # 1-based sentence indices of the four boundary positions
    return {"K1": 1, "KT": boundary, "C1": boundary + 1, "CT": t_count}


def boundary_quadruple(corpus: Corpus) -> BoundaryQuadruple:
    """Aggregate the four boundary positions over all eligible traces.

    Change metrics at position p compare against sentence p-1 of the same
    trace; when that sentence does not exist (K1 is sentence 1) the trace
    is skipped for that cell and the skip is counted.
    """
    annotated = [
        (t, a) for t, a in corpus.annotated_traces() if 0 < a.boundary < t.num_sentences
    ]
    if not annotated:
        raise ValueError("no trace with 0 < c* < T; boundary quadruple undefined")

    samples: dict[str, dict[str, list[float]]] = {
        m: {p: [] for p in QUAD_POSITIONS} for m in QUAD_METRICS
    }
    skips: dict[str, dict[str, int]] = {m: {p: 0 for p in QUAD_POSITIONS} for m in QUAD_METRICS}

    for trace, annotation in annotated:
        series = uncertainty_series(trace)
        indices = _quad_indices(annotation.boundary, trace.num_sentences)
        for pos_name, t in indices.items():
            i = t - 1  # array index
            samples["sent_entropy"][pos_name].append(float(series.sent_entropy[i]))
            samples["sent_nll"][pos_name].append(float(series.sent_nll[i]))
            if t >= 2:
                samples["entropy_change"][pos_name].append(
                    float(series.sent_entropy[i] - series.sent_entropy[i - 1])
                )
                samples["delta_ans_change"][pos_name].append(
                    float(series.delta_ans[i] - series.delta_ans[i - 1])
                )
            else:
                skips["entropy_change"][pos_name] += 1
                skips["delta_ans_change"][pos_name] += 1

    cells: dict[str, dict[str, QuadCell]] = {}
    for metric, by_pos in samples.items():
        cells[metric] = {}
        for pos_name, values in by_pos.items():
            n = len(values)
            if n == 0:
                cells[metric][pos_name] = QuadCell(
                    mean=float("nan"), stderr=float("nan"), count=0,
                    skipped=skips[metric][pos_name],
                )
                continue
            arr = np.asarray(values)
            mean = float(arr.mean())
            stderr = float(arr.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
            cells[metric][pos_name] = QuadCell(
                mean=mean, stderr=stderr, count=n, skipped=skips[metric][pos_name]
            )
    return BoundaryQuadruple(eligible_traces=len(annotated), cells=cells)


@dataclass(frozen=True)
class PerturbationStats:
    """Per-group answer-score perturbation samples, ECDF-ready.

    The per-sentence NLL perturbation is |answer_nll(P_t) - answer_nll(P_{t-1})|.
    Because answer scores are stored token-averaged, the mean absolute
    answer-logprob change per sentence equals the same magnitude; it is
    reported under its own name for the two-panel view.
    """

    nll_perturbation: dict[str, np.ndarray]
    logprob_perturbation: dict[str, np.ndarray]


def perturbation_stats(corpus: Corpus) -> PerturbationStats:
    annotated = corpus.annotated_traces()
    if not annotated:
        raise ValueError("corpus has no annotated traces")
    groups: dict[str, list[float]] = {"retained": [], "removed": []}
    for trace, annotation in annotated:
        ans_nll = trace.answer_nll_by_prefix()
        perturbation = np.abs(ans_nll[1:] - ans_nll[:-1])
        c = annotation.boundary
        groups["retained"].extend(perturbation[:c].tolist())
        groups["removed"].extend(perturbation[c:].tolist())
    as_arrays = {k: np.asarray(v, dtype=np.float64) for k, v in groups.items()}
    return PerturbationStats(
        nll_perturbation=as_arrays,
        logprob_perturbation={k: v.copy() for k, v in as_arrays.items()},
    )
