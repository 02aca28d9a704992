"""Boundary application, the random-cut baseline, and SFT export.

Cutting is delete-only: the kept sentences are the unmodified prefix
r_1..r_boundary in original order, and the final answer is appended
verbatim, so downstream SFT targets never contain rewritten text.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from .corpus import Corpus, TraceRecord


@dataclass(frozen=True)
class CutResult:
    trace_id: str
    boundary: int
    kept_sentences: int
    removed_sentences: int
    removed_tokens: int
    processed_text: str


def _join(pieces: list[str]) -> str:
    # single space between pieces unless the previous one ends with a newline
    out = []
    for i, piece in enumerate(pieces):
        if i > 0 and not pieces[i - 1].endswith("\n"):
            out.append(" ")
        out.append(piece)
    return "".join(out)


def apply_cut(trace: TraceRecord, boundary: int) -> CutResult:
    """Keep sentences 1..boundary, drop the rest, append the answer."""
    t_count = trace.num_sentences
    if not 0 <= boundary <= t_count:
        raise ValueError(f"trace {trace.id}: boundary {boundary} outside [0, {t_count}]")
    kept = [s.text for s in trace.sentences[:boundary]]
    removed_tokens = sum(s.token_count for s in trace.sentences[boundary:])
    return CutResult(
        trace_id=trace.id,
        boundary=boundary,
        kept_sentences=boundary,
        removed_sentences=t_count - boundary,
        removed_tokens=removed_tokens,
        processed_text=_join(kept + [trace.final_answer]),
    )


def random_cut(trace: TraceRecord, target_removed_tokens: float, seed: int = 0) -> CutResult:
    """Remove the sentence-complete suffix whose token count is closest to
    the target; ties resolve toward the larger boundary (less removal).

    The seed is reserved for randomized tie policies; the default policy is
    deterministic and ignores it.
    """
    if target_removed_tokens < 0:
        raise ValueError(f"target_removed_tokens must be >= 0, got {target_removed_tokens}")
    t_count = trace.num_sentences
    tokens = [s.token_count for s in trace.sentences]
    removed = 0
    best_boundary, best_gap = t_count, abs(0 - target_removed_tokens)
    for boundary in range(t_count - 1, -1, -1):
        removed += tokens[boundary]
        gap = abs(removed - target_removed_tokens)
        if gap < best_gap:  # strict: equal gaps keep the larger boundary
            best_boundary, best_gap = boundary, gap
    return apply_cut(trace, best_boundary)


def mean_removed_tokens(cuts: Mapping[str, CutResult]) -> float:
    if not cuts:
        raise ValueError("no cuts")
    return sum(c.removed_tokens for c in cuts.values()) / len(cuts)


def export_sft(corpus: Corpus, cuts: Mapping[str, CutResult], path: Path | str) -> dict:
    """Write the processed dataset as JSON lines ordered by trace id.

    Each line is {"id", "prompt": question, "response": processed text}.
    Returns a summary with the trace count and mean kept token length.
    """
    missing = [t.id for t in corpus.traces if t.id not in cuts]
    if missing:
        raise ValueError(f"missing cut for traces: {missing[:5]}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    kept_tokens = []
    for trace in sorted(corpus.traces, key=lambda t: t.id):
        cut = cuts[trace.id]
        lines.append(
            json.dumps(
                {"id": trace.id, "prompt": trace.question, "response": cut.processed_text},
                sort_keys=True,
            )
        )
        kept_tokens.append(trace.total_tokens - cut.removed_tokens)
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    mean_kept = sum(kept_tokens) / len(kept_tokens) if kept_tokens else 0.0
    return {"traces": len(lines), "mean_kept_tokens": mean_kept}
