from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import annotate, corpus_of, make_trace, random_trace
from hcc.corpus import (
    Corpus,
    CorpusError,
    EditorAnnotation,
    corpora_equal,
    import_editor_labels,
    parse_corpus,
    read_sidecar,
    validate_trace,
    write_corpus,
    write_sidecar,
)


class TestValidateTrace:
    def test_valid_trace_has_empty_report(self):
        assert validate_trace(make_trace()) == []

    def test_positive_logprob_names_sentence_and_token(self):
        trace = make_trace(
            logprobs_by_sentence=((-1.0, -3.0), (0.5,)),
            entropies_by_sentence=((0.5, 1.5), (0.2,)),
        )
        report = validate_trace(trace)
        assert len(report) == 1
        assert report[0].field == "sentences[2].logprobs[1]"

    def test_nan_hidden_row_named(self):
        hidden = np.zeros((3, 3))
        hidden[2, 1] = np.nan
        report = validate_trace(make_trace(hidden=hidden))
        assert any(v.field == "hidden.states[2]" and "non-finite" in v.message for v in report)

    def test_answer_score_count_mismatch(self):
        trace = make_trace(answer_nll=(3.0, 2.0), answer_entropy=(1.0, 0.8))
        report = validate_trace(trace)
        assert any("answer score count must equal T+1" in v.message for v in report)

    def test_hidden_row_count_mismatch(self):
        report = validate_trace(make_trace(hidden=np.zeros((4, 3))))
        assert any("row count must equal T+1" in v.message for v in report)


class TestImportLabels:
    def test_suffix_labels_kept(self):
        trace = random_trace(np.random.default_rng(0), t_count=4)
        ann = import_editor_labels(trace, [0, 0, 1, 1], mode="strict")
        assert ann.boundary == 2
        assert ann.delete_labels == (0, 0, 1, 1)

    def test_nothing_removed(self):
        trace = random_trace(np.random.default_rng(0), t_count=4)
        ann = import_editor_labels(trace, [0, 0, 0, 0], mode="strict")
        assert ann.boundary == 4

    def test_everything_removed(self):
        trace = random_trace(np.random.default_rng(0), t_count=3)
        ann = import_editor_labels(trace, [1, 1, 1], mode="strict")
        assert ann.boundary == 0

    def test_strict_rejects_non_suffix(self):
        trace = random_trace(np.random.default_rng(0), t_count=4)
        with pytest.raises(CorpusError, match="sentence 2"):
            import_editor_labels(trace, [0, 1, 0, 1], mode="strict")

    def test_lenient_rewrites_to_suffix(self):
        trace = random_trace(np.random.default_rng(0), t_count=4)
        ann = import_editor_labels(trace, [0, 1, 0, 1], mode="lenient")
        assert ann.boundary == 3
        assert ann.delete_labels == (0, 0, 0, 1)
        assert ann.flipped == 1

    def test_length_mismatch_rejected(self):
        trace = random_trace(np.random.default_rng(0), t_count=3)
        with pytest.raises(CorpusError, match="labels"):
            import_editor_labels(trace, [0, 1], mode="strict")

    @given(st.lists(st.integers(0, 1), min_size=1, max_size=12))
    def test_lenient_always_suffix_consistent(self, labels):
        trace = random_trace(np.random.default_rng(7), t_count=len(labels))
        ann = import_editor_labels(trace, labels, mode="lenient")
        for t, y in enumerate(ann.delete_labels, start=1):
            assert (y == 1) == (t > ann.boundary)


class TestAnnotationInvariant:
    def test_inconsistent_construction_rejected(self):
        with pytest.raises(CorpusError):
            EditorAnnotation((0, 1, 0), 2)

    @given(st.integers(0, 8), st.integers(1, 8))
    def test_suffix_pattern_accepted(self, boundary, t_count):
        boundary = min(boundary, t_count)
        labels = tuple(0 if t <= boundary else 1 for t in range(1, t_count + 1))
        ann = EditorAnnotation(labels, boundary)
        assert ann.boundary == boundary


class TestSidecar:
    def test_round_trip(self, rng, tmp_path):
        rows = rng.normal(size=(5, 3)).astype(np.float32)
        path = tmp_path / "x.hcc1"
        write_sidecar(path, rows)
        back = read_sidecar(path)
        assert np.array_equal(back, rows)

    def test_payload_size(self, tmp_path):
        rows = np.ones((3, 3), dtype=np.float32)  # T=2, D=3
        path = tmp_path / "x.hcc1"
        n = write_sidecar(path, rows)
        assert n == 20 + 3 * 3 * 4  # header + (T+1) x D float32

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.hcc1"
        path.write_bytes(b"NOPE" + bytes(16))
        with pytest.raises(CorpusError, match="magic"):
            read_sidecar(path)

    def test_truncated_payload(self, rng, tmp_path):
        rows = rng.normal(size=(4, 2)).astype(np.float32)
        path = tmp_path / "x.hcc1"
        write_sidecar(path, rows)
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(CorpusError, match="size mismatch"):
            read_sidecar(path)


class TestCorpusRoundTrip:
    def test_empty_corpus(self, tmp_path):
        corpus = Corpus(traces=[], annotations={}, source="t", dim=4)
        path = tmp_path / "c.jsonl"
        summary = write_corpus(corpus, path)
        assert summary["traces"] == 0
        back = parse_corpus(path)
        assert len(back) == 0 and back.dim == 4

    def test_single_trace_counts(self, tmp_path):
        hidden = np.arange(16, dtype=np.float32).reshape(4, 4)  # T=3, D=4
        trace = make_trace(
            logprobs_by_sentence=((-1.0,), (-2.0,), (-0.5,)),
            entropies_by_sentence=((0.5,), (0.1,), (0.2,)),
            answer_nll=(3.0, 2.0, 2.5, 2.2),
            answer_entropy=(1.0, 0.8, 0.9, 0.7),
            hidden=hidden,
        )
        path = tmp_path / "c.jsonl"
        write_corpus(corpus_of([trace]), path)
        back = parse_corpus(path)
        assert back.traces[0].hidden.shape == (4, 4)

    def test_missing_prefix_zero_rejected(self, tmp_path):
        trace = make_trace(answer_nll=(2.0, 2.5), answer_entropy=(0.8, 0.9))
        path = tmp_path / "c.jsonl"
        write_corpus(corpus_of([trace]), path)
        with pytest.raises(CorpusError, match="answer score count must equal T\\+1"):
            parse_corpus(path)

    def test_missing_sidecar(self, tmp_path):
        trace = make_trace()
        path = tmp_path / "c.jsonl"
        write_corpus(corpus_of([trace]), path)
        (tmp_path / "c.hcc1").unlink()
        with pytest.raises(CorpusError, match="missing sidecar"):
            parse_corpus(path)

    def test_dim_mismatch(self, tmp_path):
        trace = make_trace()
        path = tmp_path / "c.jsonl"
        write_corpus(corpus_of([trace]), path)
        text = path.read_text().splitlines()
        text[0] = text[0].replace('"dim": 3', '"dim": 5')
        path.write_text("\n".join(text) + "\n")
        with pytest.raises(CorpusError, match="dimension mismatch"):
            parse_corpus(path)

    def test_labels_survive_round_trip(self, tmp_path):
        trace = make_trace()
        corpus = corpus_of([trace], annotations={trace.id: annotate(trace, 1)})
        path = tmp_path / "c.jsonl"
        write_corpus(corpus, path)
        back = parse_corpus(path)
        assert back.annotations[trace.id].boundary == 1

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_random_corpus_round_trip(self, tmp_path_factory, seed):
        rng = np.random.default_rng(seed)
        traces = []
        annotations = {}
        for i in range(int(rng.integers(1, 5))):
            # float32 hidden rows so storage precision is exact
            trace = random_trace(rng, dim=3, trace_id=f"trace-{i:03d}")
            trace = type(trace)(
                **{**trace.__dict__, "hidden": trace.hidden.astype(np.float32)}
            )
            traces.append(trace)
            if rng.random() < 0.7:
                annotations[trace.id] = annotate(trace, int(rng.integers(0, trace.num_sentences + 1)))
        corpus = corpus_of(traces, annotations=annotations)
        path = tmp_path_factory.mktemp("rt") / "c.jsonl"
        write_corpus(corpus, path)
        back = parse_corpus(path)
        assert corpora_equal(corpus, back)

    def test_malformed_line_reports_number(self, tmp_path):
        trace = make_trace()
        path = tmp_path / "c.jsonl"
        write_corpus(corpus_of([trace]), path)
        lines = path.read_text().splitlines()
        lines.append("{not json")
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(CorpusError, match="line 3"):
            parse_corpus(path)


class TestCorpusContainer:
    def test_duplicate_ids_rejected(self):
        t = make_trace()
        with pytest.raises(CorpusError, match="duplicate"):
            corpus_of([t, t])

    def test_unknown_annotation_id_rejected(self):
        t = make_trace()
        with pytest.raises(CorpusError, match="unknown trace ids"):
            corpus_of([t], annotations={"missing": annotate(t, 1)})
