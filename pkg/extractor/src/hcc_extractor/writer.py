"""Corpus manifest + sidecar emission.

Implements the downstream toolkit's published file formats directly (the
extractor talks to it only through files):

* manifest: JSON lines; header ``{"format": "hcc-corpus", "version": 1,
  "dim": D, "source": ...}``, then one object per trace with id,
  question, final_answer, answer_token_count, sentences (text,
  token_count, logprobs, entropies), answer_scores (t, nll, entropy) and
  hidden_offset;
* sidecar (same stem, ``.hcc1``): magic ``HCC1``, u32-LE version 1,
  u32-LE dim, u64-LE row count, then float32-LE rows.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MANIFEST_FORMAT = "hcc-corpus"
MANIFEST_VERSION = 1
SIDECAR_MAGIC = b"HCC1"
SIDECAR_VERSION = 1


@dataclass
class ExtractedTrace:
    trace_id: str
    question: str
    final_answer: str
    answer_token_count: int
    sentences: list[dict]  # text, token_count, logprobs, entropies
    answer_scores: list[dict]  # t, nll, entropy
    hidden: np.ndarray  # (T+1, D) float32


@dataclass
class CorpusWriter:
    manifest_path: Path
    dim: int
    source: str
    _lines: list[str] = field(default_factory=list)
    _rows: list[np.ndarray] = field(default_factory=list)
    _offset: int = 0

    def add(self, trace: ExtractedTrace) -> None:
        hidden = np.ascontiguousarray(trace.hidden, dtype="<f4")
        if hidden.ndim != 2 or hidden.shape[1] != self.dim:
            raise ValueError(
                f"trace {trace.trace_id}: hidden shape {hidden.shape} does not match dim {self.dim}"
            )
        obj = {
            "id": trace.trace_id,
            "question": trace.question,
            "final_answer": trace.final_answer,
            "answer_token_count": trace.answer_token_count,
            "sentences": trace.sentences,
            "answer_scores": trace.answer_scores,
            "hidden_offset": self._offset,
        }
        self._lines.append(json.dumps(obj, sort_keys=True))
        self._rows.append(hidden)
        self._offset += hidden.shape[0]

    def finish(self) -> dict:
        header = json.dumps(
            {"format": MANIFEST_FORMAT, "version": MANIFEST_VERSION,
             "dim": self.dim, "source": self.source},
            sort_keys=True,
        )
        self.manifest_path.parent.mkdir(parents=True, exist_ok=True)
        manifest = "\n".join([header, *self._lines]) + "\n"
        self.manifest_path.write_text(manifest, encoding="utf-8")

        rows = (
            np.concatenate(self._rows, axis=0)
            if self._rows else np.zeros((0, self.dim), dtype="<f4")
        )
        sidecar_path = self.manifest_path.with_suffix(".hcc1")
        header_bytes = struct.pack(
            "<4sIIQ", SIDECAR_MAGIC, SIDECAR_VERSION, self.dim, rows.shape[0]
        )
        sidecar_path.write_bytes(header_bytes + rows.tobytes(order="C"))
        return {
            "traces": len(self._lines),
            "rows": int(rows.shape[0]),
            "manifest": str(self.manifest_path),
            "sidecar": str(sidecar_path),
        }
