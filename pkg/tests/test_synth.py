from __future__ import annotations

import numpy as np
import pytest

from hcc.corpus import CorpusError, corpora_equal, validate_trace
from hcc.geometry import geometry_series, group_means
from hcc.synth import SynthConfig, describe, generate, parse_config
from hcc.uncertainty import uncertainty_series


class TestConfig:
    def test_defaults_valid(self):
        SynthConfig().validate()

    def test_infeasible_t_range(self):
        with pytest.raises(CorpusError, match="infeasible"):
            SynthConfig(t_min=10, t_max=5).validate()

    def test_t_min_floor(self):
        with pytest.raises(CorpusError, match="t_min"):
            SynthConfig(t_min=3).validate()

    def test_levels_must_separate(self):
        with pytest.raises(CorpusError, match="NLL level"):
            SynthConfig(retained_nll=1.5, removed_nll=1.0).validate()

    def test_describe_includes_seed_verbatim(self):
        text = describe(SynthConfig(seed=987654321))
        assert "seed=987654321" in text

    def test_describe_parse_round_trip(self):
        config = SynthConfig(count=17, t_min=5, t_max=9, seed=3, drift=1.25)
        assert parse_config(describe(config)) == config

    def test_parse_rejects_unknown_key(self):
        with pytest.raises(CorpusError, match="unknown key"):
            parse_config("nope=1")


class TestGenerate:
    def test_deterministic(self):
        config = SynthConfig(count=6, seed=42)
        assert corpora_equal(generate(config), generate(config))

    def test_all_traces_schema_valid(self):
        corpus = generate(SynthConfig(count=10, seed=1))
        for trace in corpus.traces:
            assert validate_trace(trace, dim=corpus.dim) == []

    def test_annotations_cover_all_traces(self):
        corpus = generate(SynthConfig(count=8, seed=2))
        assert set(corpus.annotations) == {t.id for t in corpus.traces}
        for trace in corpus.traces:
            ann = corpus.annotations[trace.id]
            assert 0 < ann.boundary < trace.num_sentences

    def test_t_range_respected(self):
        corpus = generate(SynthConfig(count=30, seed=3, t_min=5, t_max=8))
        lengths = {t.num_sentences for t in corpus.traces}
        assert lengths <= set(range(5, 9))

    def test_population_signatures(self):
        corpus = generate(SynthConfig(count=200, seed=7))
        nll_slopes_retained, nll_slopes_removed = [], []
        disp_removed_lower = 0
        for trace, ann in corpus.annotated_traces():
            nll = trace.answer_nll_by_prefix()
            c = ann.boundary
            retained_deltas = np.diff(nll[: c + 1])
            removed_deltas = np.diff(nll[c:])
            nll_slopes_retained.append(retained_deltas.mean())
            nll_slopes_removed.append(removed_deltas.mean())
            gm = group_means(geometry_series(trace), ann)
            if gm.removed["disp_per_token"] < gm.retained["disp_per_token"]:
                disp_removed_lower += 1
        assert np.mean(nll_slopes_retained) <= 0.0
        assert np.mean(nll_slopes_removed) >= 0.0
        assert disp_removed_lower / len(corpus) >= 0.75

    def test_sentence_levels_follow_phase(self):
        corpus = generate(SynthConfig(count=50, seed=9))
        retained, removed = [], []
        for trace, ann in corpus.annotated_traces():
            series = uncertainty_series(trace)
            retained.extend(series.sent_nll[: ann.boundary])
            removed.extend(series.sent_nll[ann.boundary:])
        assert np.mean(removed) > np.mean(retained)

    def test_empty_corpus(self):
        corpus = generate(SynthConfig(count=0, seed=0))
        assert len(corpus) == 0
