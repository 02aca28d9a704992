"""Frozen-evaluator scoring of raw traces.

For one trace the evaluator context is the token concatenation of the
question block (question text plus a trailing newline) and the segmented
reasoning sentences; each block is tokenized separately so sentence token
spans are exact.  One forward pass over that context yields, per sentence
token, the realized-token log-probability and the full-vocabulary
predictive entropy, plus the hidden state at the last token of the
question (h_0) and of every sentence (h_t) from the configured layer.

Answer-conditional scores run one forward pass per prefix P_0..P_T over
``prefix + newline + answer`` and average over the answer tokens only.
Scoring is deterministic (no sampling, eval mode, CPU by default).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
import torch

from .segmentation import Segmented, segment
from .writer import CorpusWriter, ExtractedTrace

logger = logging.getLogger("hcc_extractor")


@dataclass(frozen=True)
class RawTrace:
    trace_id: str
    question: str
    reasoning: str
    answer: str


@dataclass(frozen=True)
class ExtractionConfig:
    model: str  # HF model id or local path
    layer: int = -1  # hidden-state layer selector, -1 = final
    device: str = "cpu"
    batch_size: int = 1  # reserved; scoring is per-trace sequential
    rule: str = "simple-v1"
    source: str = "extracted"


class ExtractionError(RuntimeError):
    pass


def read_raw_traces(path: Path) -> list[RawTrace]:
    traces = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                traces.append(
                    RawTrace(
                        trace_id=str(obj["id"]),
                        question=str(obj["question"]),
                        reasoning=str(obj["reasoning"]),
                        answer=str(obj["answer"]),
                    )
                )
            except (json.JSONDecodeError, KeyError) as exc:
                raise ExtractionError(f"{path}:{line_no}: bad raw trace ({exc})") from exc
    return traces


class Evaluator:
    """A frozen causal LM plus tokenizer, wrapped for scoring."""

    def __init__(self, config: ExtractionConfig):
        from transformers import AutoModelForCausalLM, AutoTokenizer

        try:
            self.tokenizer = AutoTokenizer.from_pretrained(config.model)
            self.model = AutoModelForCausalLM.from_pretrained(config.model)
        except Exception as exc:
            raise ExtractionError(f"cannot load evaluator model {config.model!r}: {exc}") from exc
        self.model.eval()
        self.device = torch.device(config.device)
        self.model.to(self.device)
        n_layers = getattr(self.model.config, "num_hidden_layers", None) or getattr(
            self.model.config, "n_layer"
        )
        if not (-(n_layers + 1) <= config.layer <= n_layers):
            raise ExtractionError(
                f"layer {config.layer} invalid for a {n_layers}-layer model"
            )
        self.layer = config.layer
        self.max_positions = getattr(self.model.config, "n_positions", None) or getattr(
            self.model.config, "max_position_embeddings", 10**9
        )
        self.dim = getattr(self.model.config, "hidden_size", None) or getattr(
            self.model.config, "n_embd"
        )

    def encode(self, text: str) -> list[int]:
        return self.tokenizer.encode(text, add_special_tokens=False)

    @torch.no_grad()
    def _forward(self, ids: list[int]):
        tensor = torch.tensor([ids], dtype=torch.long, device=self.device)
        out = self.model(tensor, output_hidden_states=True)
        logits = out.logits[0].to(torch.float64)
        log_probs = torch.log_softmax(logits, dim=-1)
        hidden = out.hidden_states[self.layer][0]
        return log_probs, hidden

    @torch.no_grad()
    def token_scores(self, ids: list[int], start: int) -> tuple[np.ndarray, np.ndarray]:
        """(logprob, entropy) per realized token at positions >= start.

        Position i is scored by the distribution emitted after token i-1,
        so ``start`` must be >= 1.
        """
        log_probs, _ = self._forward(ids)
        target = torch.tensor(ids[start:], dtype=torch.long, device=self.device)
        preds = log_probs[start - 1 : len(ids) - 1]
        realized = preds.gather(1, target[:, None])[:, 0]
        entropy = -(preds.exp() * preds).sum(dim=-1)
        return (
            np.minimum(realized.cpu().numpy(), 0.0),
            np.maximum(entropy.cpu().numpy(), 0.0),
        )

    @torch.no_grad()
    def context_scores_and_hidden(
        self, block_ids: list[list[int]]
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """One pass over concatenated blocks.

        Returns per-token (logprob, entropy) for every token after the
        first block, and the hidden row at the last token of each block.
        """
        flat = [tok for block in block_ids for tok in block]
        log_probs, hidden = self._forward(flat)
        first = len(block_ids[0])
        target = torch.tensor(flat[first:], dtype=torch.long, device=self.device)
        preds = log_probs[first - 1 : len(flat) - 1]
        realized = preds.gather(1, target[:, None])[:, 0]
        entropy = -(preds.exp() * preds).sum(dim=-1)
        ends = np.cumsum([len(b) for b in block_ids]) - 1
        rows = hidden[torch.tensor(ends, device=self.device)].to(torch.float32).cpu().numpy()
        return (
            np.minimum(realized.cpu().numpy(), 0.0),
            np.maximum(entropy.cpu().numpy(), 0.0),
            rows,
        )


def score_trace(evaluator: Evaluator, raw: RawTrace, rule: str) -> Optional[ExtractedTrace]:
    """Score one raw trace; returns None when it exceeds the context window."""
    segmented = segment(raw.reasoning, rule)
    question_ids = evaluator.encode(raw.question + "\n")
    if not question_ids:
        raise ExtractionError(f"trace {raw.trace_id}: question tokenizes to nothing")
    sentence_ids = [evaluator.encode(s) for s in segmented.sentences]
    if any(len(ids) == 0 for ids in sentence_ids):
        raise ExtractionError(f"trace {raw.trace_id}: a sentence tokenizes to nothing")
    separator_ids = evaluator.encode("\n")
    answer_ids = evaluator.encode(raw.answer)
    if not answer_ids:
        raise ExtractionError(f"trace {raw.trace_id}: answer tokenizes to nothing")

    total = len(question_ids) + sum(len(i) for i in sentence_ids)
    longest = total + len(separator_ids) + len(answer_ids)
    if longest > evaluator.max_positions:
        logger.warning(
            "trace %s: %d tokens exceed the %d-token context; skipped",
            raw.trace_id, longest, evaluator.max_positions,
        )
        return None

    # sentence-token scores and boundary hidden states from one pass
    blocks = [question_ids, *sentence_ids]
    logprobs, entropies, hidden = evaluator.context_scores_and_hidden(blocks)
    sentences = []
    cursor = 0
    for text, ids in zip(segmented.sentences, sentence_ids):
        n = len(ids)
        sentences.append(
            {
                "text": text,
                "token_count": n,
                "logprobs": [float(x) for x in logprobs[cursor : cursor + n]],
                "entropies": [float(x) for x in entropies[cursor : cursor + n]],
            }
        )
        cursor += n

    # answer-conditional scores for every prefix P_0..P_T
    answer_scores = []
    prefix = list(question_ids)
    for t in range(len(sentence_ids) + 1):
        if t > 0:
            prefix = prefix + sentence_ids[t - 1]
        context = prefix + separator_ids
        lp, ent = evaluator.token_scores(context + answer_ids, start=len(context))
        answer_scores.append(
            {"t": t, "nll": float(-lp.mean()), "entropy": float(ent.mean())}
        )

    return ExtractedTrace(
        trace_id=raw.trace_id,
        question=raw.question,
        final_answer=raw.answer,
        answer_token_count=len(answer_ids),
        sentences=sentences,
        answer_scores=answer_scores,
        hidden=hidden,
    )


def extract(
    raws: Iterable[RawTrace], config: ExtractionConfig, out_path: Path
) -> dict:
    """Score all traces and emit the corpus manifest + sidecar."""
    evaluator = Evaluator(config)
    writer = CorpusWriter(Path(out_path), dim=evaluator.dim, source=config.source)
    skipped = 0
    for raw in raws:
        result = score_trace(evaluator, raw, config.rule)
        if result is None:
            skipped += 1
            continue
        writer.add(result)
    summary = writer.finish()
    summary["skipped"] = skipped
    return summary
