from __future__ import annotations

import numpy as np
import pytest

from hcc.corpus import AnswerScore, Corpus, EditorAnnotation, SentenceRecord, TraceRecord


def make_trace(
    trace_id="trace-0",
    logprobs_by_sentence=((-1.0, -3.0), (-0.5,)),
    entropies_by_sentence=((0.5, 1.5), (0.2,)),
    answer_nll=(3.0, 2.0, 2.5),
    answer_entropy=(1.0, 0.8, 0.9),
    hidden=None,
    question="q?",
    final_answer="42",
):
    t_count = len(logprobs_by_sentence)
    sentences = tuple(
        SentenceRecord(
            index=i + 1,
            text=f"sentence {i + 1}.",
            token_count=len(lps),
            logprobs=tuple(lps),
            entropies=tuple(ents),
        )
        for i, (lps, ents) in enumerate(zip(logprobs_by_sentence, entropies_by_sentence))
    )
    scores = tuple(
        AnswerScore(prefix_index=t, nll=float(n), entropy=float(e))
        for t, (n, e) in enumerate(zip(answer_nll, answer_entropy))
    )
    if hidden is None:
        hidden = np.arange((t_count + 1) * 3, dtype=np.float64).reshape(t_count + 1, 3)
    return TraceRecord(
        id=trace_id,
        question=question,
        sentences=sentences,
        final_answer=final_answer,
        answer_token_count=2,
        answer_scores=scores,
        hidden=np.asarray(hidden, dtype=np.float64),
    )


def annotate(trace, boundary):
    labels = tuple(0 if t <= boundary else 1 for t in range(1, trace.num_sentences + 1))
    return EditorAnnotation(labels, boundary)


def random_trace(rng, t_count=None, dim=4, trace_id=None):
    t_count = t_count or int(rng.integers(1, 9))
    sentences = []
    for t in range(1, t_count + 1):
        n = int(rng.integers(1, 7))
        sentences.append(
            (
                tuple(-np.abs(rng.normal(1.0, 0.5, n))),
                tuple(np.abs(rng.normal(0.5, 0.3, n))),
            )
        )
    nll = tuple(np.abs(rng.normal(2.0, 0.5, t_count + 1)))
    ent = tuple(np.abs(rng.normal(1.0, 0.3, t_count + 1)))
    hidden = rng.normal(size=(t_count + 1, dim))
    return make_trace(
        trace_id=trace_id or f"trace-{rng.integers(1 << 30)}",
        logprobs_by_sentence=tuple(s[0] for s in sentences),
        entropies_by_sentence=tuple(s[1] for s in sentences),
        answer_nll=nll,
        answer_entropy=ent,
        hidden=hidden,
    )


def corpus_of(traces, annotations=None, dim=None):
    dim = dim if dim is not None else traces[0].hidden.shape[1]
    return Corpus(
        traces=list(traces),
        annotations=annotations or {},
        source="test",
        dim=dim,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
