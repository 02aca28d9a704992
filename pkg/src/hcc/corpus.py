"""Trace data model, validation, and corpus file I/O.

A corpus lives in two files:

* a JSON-lines manifest (header line + one object per trace) holding all
  per-token scores, per-prefix answer scores, and optional editor labels;
* a binary sidecar holding the hidden-state rows for all traces as 4-byte
  little-endian reals, so the manifest stays diffable while the tensors
  stay compact.

Time indexing convention: sentences are 1-based (t = 1..T).  Hidden rows
and answer scores carry one extra leading entry for the post-question
state / empty prefix (index 0), so both have T+1 entries.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

SIDECAR_MAGIC = b"HCC1"
SIDECAR_VERSION = 1
MANIFEST_FORMAT = "hcc-corpus"
MANIFEST_VERSION = 1


class CorpusError(ValueError):
    """Raised for malformed manifests, sidecars, or inconsistent data."""


@dataclass(frozen=True)
class SentenceRecord:
    """One reasoning sentence with its per-token evaluator scores."""

    index: int  # 1-based position in the trace
    text: str
    token_count: int
    logprobs: tuple[float, ...]  # nats, each <= 0
    entropies: tuple[float, ...]  # nats, each >= 0


@dataclass(frozen=True)
class AnswerScore:
    """Token-averaged answer-conditional scores for one reasoning prefix."""

    prefix_index: int  # 0 = question only, t = after sentence t
    nll: float
    entropy: float


@dataclass(frozen=True)
class TraceRecord:
    """One answer-correct trace: sentences, scores, and hidden-state track.

    ``hidden`` has shape (T+1, D); row 0 is the evaluator state after
    consuming the question only, row t the state after sentence t.
    """

    id: str
    question: str
    sentences: tuple[SentenceRecord, ...]
    final_answer: str
    answer_token_count: int
    answer_scores: tuple[AnswerScore, ...]
    hidden: np.ndarray

    @property
    def num_sentences(self) -> int:
        return len(self.sentences)

    @property
    def total_tokens(self) -> int:
        return sum(s.token_count for s in self.sentences)

    def answer_nll_by_prefix(self) -> np.ndarray:
        return np.array([a.nll for a in self.answer_scores], dtype=np.float64)

    def answer_entropy_by_prefix(self) -> np.ndarray:
        return np.array([a.entropy for a in self.answer_scores], dtype=np.float64)


@dataclass(frozen=True)
class EditorAnnotation:
    """Per-sentence deletion labels and the implied boundary.

    Suffix-consistent by construction: ``delete_labels[t-1] == 1`` exactly
    when ``t > boundary``.  ``boundary == 0`` means everything was deleted,
    ``boundary == T`` means nothing was.
    """

    delete_labels: tuple[int, ...]
    boundary: int
    flipped: int = 0  # labels rewritten during lenient import

    def __post_init__(self):
        t_count = len(self.delete_labels)
        if not 0 <= self.boundary <= t_count:
            raise CorpusError(
                f"boundary {self.boundary} outside [0, {t_count}]"
            )
        for t, y in enumerate(self.delete_labels, start=1):
            expected = 1 if t > self.boundary else 0
            if y != expected:
                raise CorpusError(
                    f"labels not suffix-consistent at sentence {t}: "
                    f"got {y}, boundary {self.boundary} implies {expected}"
                )


@dataclass
class Corpus:
    """Immutable-by-convention bundle of traces plus optional annotations."""

    traces: list[TraceRecord]
    annotations: dict[str, EditorAnnotation] = field(default_factory=dict)
    source: str = "unknown"
    dim: int = 0
    version: int = MANIFEST_VERSION

    def __post_init__(self):
        ids = [t.id for t in self.traces]
        if len(set(ids)) != len(ids):
            raise CorpusError("duplicate trace ids in corpus")
        unknown = set(self.annotations) - set(ids)
        if unknown:
            raise CorpusError(f"annotations for unknown trace ids: {sorted(unknown)}")

    def __len__(self) -> int:
        return len(self.traces)

    def trace(self, trace_id: str) -> TraceRecord:
        for t in self.traces:
            if t.id == trace_id:
                return t
        raise KeyError(trace_id)

    def annotated_traces(self) -> list[tuple[TraceRecord, EditorAnnotation]]:
        return [
            (t, self.annotations[t.id]) for t in self.traces if t.id in self.annotations
        ]


@dataclass(frozen=True)
class Violation:
    """One invariant violation found in a trace; data, not an exception."""

    field: str
    message: str

    def __str__(self) -> str:
        return f"{self.field}: {self.message}"


def _finite(x: float) -> bool:
    return isinstance(x, (int, float)) and math.isfinite(x)


def validate_trace(trace: TraceRecord, dim: Optional[int] = None) -> list[Violation]:
    """Check every type invariant; returns an empty list iff all hold.

    ``dim`` optionally pins the expected hidden dimension (corpus-level D).
    """
    out: list[Violation] = []
    t_count = trace.num_sentences

    if t_count < 1:
        out.append(Violation("sentences", "trace must have at least one sentence"))
    if not trace.final_answer:
        out.append(Violation("final_answer", "must be non-empty"))
    if trace.answer_token_count < 1:
        out.append(
            Violation("answer_token_count", f"must be positive, got {trace.answer_token_count}")
        )

    for s in trace.sentences:
        loc = f"sentences[{s.index}]"
        if not s.text:
            out.append(Violation(f"{loc}.text", "must be non-empty"))
        if s.token_count < 1:
            out.append(Violation(f"{loc}.token_count", f"must be positive, got {s.token_count}"))
        if len(s.logprobs) != s.token_count or len(s.entropies) != s.token_count:
            out.append(
                Violation(
                    f"{loc}.token_scores",
                    f"token_count {s.token_count} != scores length "
                    f"({len(s.logprobs)} logprobs, {len(s.entropies)} entropies)",
                )
            )
        for i, lp in enumerate(s.logprobs, start=1):
            if not _finite(lp) or lp > 0.0:
                out.append(
                    Violation(f"{loc}.logprobs[{i}]", f"must be finite and <= 0, got {lp}")
                )
        for i, h in enumerate(s.entropies, start=1):
            if not _finite(h) or h < 0.0:
                out.append(
                    Violation(f"{loc}.entropies[{i}]", f"must be finite and >= 0, got {h}")
                )

    if len(trace.answer_scores) != t_count + 1:
        out.append(
            Violation(
                "answer_scores",
                f"answer score count must equal T+1 ({t_count + 1}), "
                f"got {len(trace.answer_scores)}",
            )
        )
    for i, a in enumerate(trace.answer_scores):
        if a.prefix_index != i:
            out.append(
                Violation(
                    f"answer_scores[{i}].t",
                    f"prefix indices must be 0..T in order, got {a.prefix_index}",
                )
            )
        if not _finite(a.nll) or a.nll < 0.0:
            out.append(Violation(f"answer_scores[{i}].nll", f"must be finite and >= 0, got {a.nll}"))
        if not _finite(a.entropy) or a.entropy < 0.0:
            out.append(
                Violation(f"answer_scores[{i}].entropy", f"must be finite and >= 0, got {a.entropy}")
            )

    hidden = trace.hidden
    if hidden.ndim != 2:
        out.append(Violation("hidden.states", f"must be 2-D, got shape {hidden.shape}"))
    else:
        if hidden.shape[0] != t_count + 1:
            out.append(
                Violation(
                    "hidden.states",
                    f"row count must equal T+1 ({t_count + 1}), got {hidden.shape[0]}",
                )
            )
        if dim is not None and hidden.shape[1] != dim:
            out.append(
                Violation("hidden.states", f"dim must be {dim}, got {hidden.shape[1]}")
            )
        if hidden.shape[1] < 1:
            out.append(Violation("hidden.states", "dim must be positive"))
        bad_rows = np.where(~np.isfinite(hidden).all(axis=1))[0] if hidden.size else []
        for r in bad_rows:
            out.append(Violation(f"hidden.states[{r}]", "non-finite"))

    return out


def import_editor_labels(
    trace: TraceRecord, raw_labels: Sequence[int], mode: str = "strict"
) -> EditorAnnotation:
    """Turn raw per-sentence delete marks into a suffix-consistent annotation.

    Strict mode requires the marks to already form a deleted suffix.  Lenient
    mode keeps the last retained index and rewrites everything after it to
    deleted, counting how many labels were flipped; non-suffix marks are
    treated as editor noise.
    """
    t_count = trace.num_sentences
    if len(raw_labels) != t_count:
        raise CorpusError(
            f"trace {trace.id}: got {len(raw_labels)} labels for {t_count} sentences"
        )
    labels = [int(y) for y in raw_labels]
    if any(y not in (0, 1) for y in labels):
        raise CorpusError(f"trace {trace.id}: labels must be 0 or 1, got {labels}")

    retained = [t for t, y in enumerate(labels, start=1) if y == 0]
    boundary = retained[-1] if retained else 0
    suffix = [0 if t <= boundary else 1 for t in range(1, t_count + 1)]

    if mode == "strict":
        for t, (got, want) in enumerate(zip(labels, suffix), start=1):
            if got != want:
                raise CorpusError(
                    f"trace {trace.id}: labels are not a deleted suffix; "
                    f"first inconsistency at sentence {t} (label {got}, "
                    f"boundary {boundary} implies {want})"
                )
        return EditorAnnotation(tuple(labels), boundary)
    if mode == "lenient":
        flips = sum(1 for got, want in zip(labels, suffix) if got != want)
        return EditorAnnotation(tuple(suffix), boundary, flipped=flips)
    raise ValueError(f"unknown import mode {mode!r}")


# ---------------------------------------------------------------------------
# sidecar I/O

_SIDECAR_HEADER = struct.Struct("<4sIIQ")  # magic, version, dim, total_rows


def write_sidecar(path: Path, rows: np.ndarray) -> int:
    """Write hidden rows as float32-LE; returns bytes written."""
    rows = np.ascontiguousarray(rows, dtype="<f4")
    if rows.ndim != 2:
        raise CorpusError(f"sidecar rows must be 2-D, got shape {rows.shape}")
    header = _SIDECAR_HEADER.pack(SIDECAR_MAGIC, SIDECAR_VERSION, rows.shape[1], rows.shape[0])
    payload = rows.tobytes(order="C")
    path.write_bytes(header + payload)
    return len(header) + len(payload)


def read_sidecar(path: Path) -> np.ndarray:
    if not path.exists():
        raise CorpusError(f"missing sidecar {path}")
    blob = path.read_bytes()
    if len(blob) < _SIDECAR_HEADER.size:
        raise CorpusError(f"sidecar {path} truncated: no header")
    magic, version, dim, total_rows = _SIDECAR_HEADER.unpack_from(blob)
    if magic != SIDECAR_MAGIC:
        raise CorpusError(f"sidecar {path} has bad magic {magic!r}")
    if version != SIDECAR_VERSION:
        raise CorpusError(f"sidecar {path} has unsupported version {version}")
    expected = _SIDECAR_HEADER.size + 4 * dim * total_rows
    if len(blob) != expected:
        raise CorpusError(
            f"sidecar {path} payload size mismatch: expected {expected} bytes, got {len(blob)}"
        )
    data = np.frombuffer(blob, dtype="<f4", offset=_SIDECAR_HEADER.size)
    return data.reshape(total_rows, dim) if total_rows else data.reshape(0, dim)


# ---------------------------------------------------------------------------
# manifest I/O

def _sidecar_path(manifest_path: Path) -> Path:
    return manifest_path.with_suffix(".hcc1")


def _trace_to_json(trace: TraceRecord, offset: int, annotation: Optional[EditorAnnotation]) -> dict:
    obj = {
        "id": trace.id,
        "question": trace.question,
        "final_answer": trace.final_answer,
        "answer_token_count": trace.answer_token_count,
        "sentences": [
            {
                "text": s.text,
                "token_count": s.token_count,
                "logprobs": list(s.logprobs),
                "entropies": list(s.entropies),
            }
            for s in trace.sentences
        ],
        "answer_scores": [
            {"t": a.prefix_index, "nll": a.nll, "entropy": a.entropy}
            for a in trace.answer_scores
        ],
        "hidden_offset": offset,
    }
    if annotation is not None:
        obj["labels"] = list(annotation.delete_labels)
    return obj


def _trace_from_json(obj: dict, sidecar: np.ndarray, dim: int, line_no: int) -> TraceRecord:
    try:
        sentences = tuple(
            SentenceRecord(
                index=i,
                text=s["text"],
                token_count=int(s["token_count"]),
                logprobs=tuple(float(x) for x in s["logprobs"]),
                entropies=tuple(float(x) for x in s["entropies"]),
            )
            for i, s in enumerate(obj["sentences"], start=1)
        )
        answer_scores = tuple(
            AnswerScore(prefix_index=int(a["t"]), nll=float(a["nll"]), entropy=float(a["entropy"]))
            for a in obj["answer_scores"]
        )
        offset = int(obj["hidden_offset"])
        trace_id = obj["id"]
        question = obj["question"]
        final_answer = obj["final_answer"]
        answer_token_count = int(obj["answer_token_count"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CorpusError(f"manifest line {line_no}: malformed trace object ({exc})") from exc

    rows = len(sentences) + 1
    if offset < 0 or offset + rows > sidecar.shape[0]:
        raise CorpusError(
            f"manifest line {line_no}: hidden_offset {offset} with {rows} rows "
            f"exceeds sidecar ({sidecar.shape[0]} rows)"
        )
    hidden = sidecar[offset : offset + rows].copy()
    hidden.setflags(write=False)
    return TraceRecord(
        id=trace_id,
        question=question,
        sentences=sentences,
        final_answer=final_answer,
        answer_token_count=answer_token_count,
        answer_scores=answer_scores,
        hidden=hidden,
    )


def write_corpus(corpus: Corpus, manifest_path: Path | str) -> dict:
    """Emit manifest + sidecar; returns a summary with trace/byte counts.

    Trace order is preserved, so ``parse_corpus(write_corpus(c))`` reproduces
    ``c`` exactly (hidden rows are stored at float32 precision).
    """
    manifest_path = Path(manifest_path)
    header = {
        "format": MANIFEST_FORMAT,
        "version": corpus.version,
        "dim": corpus.dim,
        "source": corpus.source,
    }
    lines = [json.dumps(header, sort_keys=True)]
    offset = 0
    blocks = []
    for trace in corpus.traces:
        ann = corpus.annotations.get(trace.id)
        lines.append(json.dumps(_trace_to_json(trace, offset, ann), sort_keys=True))
        blocks.append(np.asarray(trace.hidden, dtype="<f4"))
        offset += trace.hidden.shape[0]
    rows = np.concatenate(blocks, axis=0) if blocks else np.zeros((0, corpus.dim), dtype="<f4")
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    manifest_bytes = ("\n".join(lines) + "\n").encode("utf-8")
    manifest_path.write_bytes(manifest_bytes)
    sidecar_bytes = write_sidecar(_sidecar_path(manifest_path), rows)
    return {
        "traces": len(corpus.traces),
        "manifest_bytes": len(manifest_bytes),
        "sidecar_bytes": sidecar_bytes,
    }


def parse_corpus(manifest_path: Path | str, strict: bool = True) -> Corpus:
    """Parse and validate a manifest + sidecar pair.

    With ``strict=True`` (default) the first invariant violation raises a
    ``CorpusError`` naming the offending manifest line.  ``strict=False``
    defers value-level violations to the caller (see ``validate_corpus``);
    structural problems (bad JSON, missing sidecar, offset overruns) always
    raise.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise CorpusError(f"missing manifest {manifest_path}")
    sidecar = read_sidecar(_sidecar_path(manifest_path))

    traces: list[TraceRecord] = []
    annotations: dict[str, EditorAnnotation] = {}
    header: Optional[dict] = None
    with manifest_path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"manifest line {line_no}: invalid JSON ({exc})") from exc
            if header is None:
                if obj.get("format") != MANIFEST_FORMAT:
                    raise CorpusError(
                        f"manifest line {line_no}: expected format header "
                        f"{MANIFEST_FORMAT!r}, got {obj.get('format')!r}"
                    )
                if obj.get("version") != MANIFEST_VERSION:
                    raise CorpusError(
                        f"manifest line {line_no}: unsupported version {obj.get('version')}"
                    )
                header = obj
                if sidecar.shape[0] and sidecar.shape[1] != obj["dim"]:
                    raise CorpusError(
                        f"dimension mismatch: manifest dim {obj['dim']}, "
                        f"sidecar dim {sidecar.shape[1]}"
                    )
                continue
            trace = _trace_from_json(obj, sidecar, header["dim"], line_no)
            if strict:
                problems = validate_trace(trace, dim=header["dim"])
                if problems:
                    raise CorpusError(
                        f"manifest line {line_no} (trace {trace.id}): {problems[0]}"
                    )
            if "labels" in obj:
                annotations[trace.id] = import_editor_labels(trace, obj["labels"], mode="strict")
            traces.append(trace)

    if header is None:
        raise CorpusError(f"manifest {manifest_path} has no header line")
    return Corpus(
        traces=traces,
        annotations=annotations,
        source=header.get("source", "unknown"),
        dim=header["dim"],
        version=header["version"],
    )


def validate_corpus(corpus: Corpus) -> dict[str, list[Violation]]:
    """Run ``validate_trace`` over every trace; keyed by trace id."""
    out: dict[str, list[Violation]] = {}
    for trace in corpus.traces:
        problems = validate_trace(trace, dim=corpus.dim or None)
        if problems:
            out[trace.id] = problems
    return out


def corpora_equal(a: Corpus, b: Corpus) -> bool:
    """Value equality used by round-trip tests."""
    if (a.source, a.dim, a.version) != (b.source, b.dim, b.version):
        return False
    if len(a.traces) != len(b.traces) or a.annotations.keys() != b.annotations.keys():
        return False
    for ta, tb in zip(a.traces, b.traces):
        if (
            ta.id != tb.id
            or ta.question != tb.question
            or ta.final_answer != tb.final_answer
            or ta.answer_token_count != tb.answer_token_count
            or ta.sentences != tb.sentences
            or ta.answer_scores != tb.answer_scores
            or not np.array_equal(ta.hidden, tb.hidden)
        ):
            return False
    for tid, ann in a.annotations.items():
        other = b.annotations[tid]
        if ann.delete_labels != other.delete_labels or ann.boundary != other.boundary:
            return False
    return True
