"""End-to-end acceptance suite.

Each test prints one PASS line with its measured numbers after asserting
the documented thresholds, so a plain ``pytest -s tests/test_acceptance.py``
doubles as the acceptance report.
"""

from __future__ import annotations

import time

import numpy as np
import pytest

from conftest import corpus_of, make_trace
from oracles import delta_ans_brute, geometry_brute, sentence_scores_brute
from hcc.cli import run
from hcc.corpus import Corpus
from hcc.cutter import mean_removed_tokens, random_cut
from hcc.geometry import geometry_series, group_means
from hcc.model import HccConfig, TraceFeatures, batch_loss, gradients, init_params
from hcc.stats import paired_table, self_consistency
from hcc.synth import SynthConfig, generate
from hcc.training import predict_corpus, train
from hcc.uncertainty import sentence_uncertainty, uncertainty_series

ACCEPTANCE_SYNTH_SEED = 11
ACCEPTANCE_MODEL_SEED = 0


def _split(full: Corpus, n_train: int) -> tuple[Corpus, Corpus]:
    pairs = full.annotated_traces()
    head, tail = pairs[:n_train], pairs[n_train:]

    def build(pairs):
        return Corpus(
            traces=[t for t, _ in pairs],
            annotations={t.id: a for t, a in pairs},
            source=full.source,
            dim=full.dim,
        )

    return build(head), build(tail)


def report(label: str, detail: str) -> None:
    print(f"[PASS] {label}: {detail}")


class TestMetricOracleEquivalence:
    def test_metrics_match_brute_force_on_100_traces(self):
        started = time.monotonic()
        corpus = generate(SynthConfig(count=100, seed=71, t_min=4, t_max=16, dim=8))
        eps = 1e-8
        worst = 0.0
        for trace in corpus.traces:
            series = uncertainty_series(trace)
            for i, s in enumerate(trace.sentences):
                nll, ent = sentence_scores_brute(s.logprobs, s.entropies)
                worst = max(worst, abs(series.sent_nll[i] - nll), abs(series.sent_entropy[i] - ent))
            deltas = delta_ans_brute([a.nll for a in trace.answer_scores])
            worst = max(worst, np.abs(series.delta_ans - deltas).max())

            geo = geometry_series(trace, eps)
            brute = geometry_brute(
                [row.astype(np.float64).tolist() for row in trace.hidden],
                [s.token_count for s in trace.sentences],
                eps,
            )
            for name in ("displacement", "forward_progress", "efficiency",
                         "disp_per_token", "prog_per_token"):
                worst = max(worst, np.abs(geo.metric(name) - np.asarray(brute[name])).max())
            curv_brute = np.asarray([np.nan if c is None else c for c in brute["curvature"]])
            got = geo.curvature
            assert np.isnan(got[0]) and np.isnan(curv_brute[0])
            if len(got) > 1:
                worst = max(worst, np.abs(got[1:] - curv_brute[1:]).max())
        elapsed = time.monotonic() - started
        assert worst <= 1e-9, f"worst deviation {worst:.3e}"
        assert elapsed < 10.0, f"took {elapsed:.1f}s"
        report("metric oracle equivalence",
               f"100 traces, worst |dev| {worst:.2e} <= 1e-9, {elapsed:.2f}s < 10s")


class TestTelescopingAndBounds:
    def test_invariants_on_every_synthetic_trace(self):
        corpus = generate(SynthConfig(count=150, seed=72))
        worst_tel = 0.0
        for trace in corpus.traces:
            series = uncertainty_series(trace)
            nll = trace.answer_nll_by_prefix()
            worst_tel = max(worst_tel, abs(series.delta_ans.sum() - (nll[0] - nll[-1])))
            geo = geometry_series(trace, 1e-8)
            assert (np.abs(geo.forward_progress) <= geo.displacement + 1e-15).all()
            curv = geo.curvature[1:]
            assert ((curv >= 0.0 - 1e-9) & (curv <= 2.0 + 1e-9)).all()
        assert worst_tel <= 1e-12
        report("telescoping and bounds",
               f"150 traces, worst telescoping residual {worst_tel:.2e} <= 1e-12; "
               "|G_t| <= D_t and Curv in [0, 2+1e-9] everywhere")


class TestGradientCorrectness:
    def test_finite_difference_agreement_over_20_configs(self):
        started = time.monotonic()
        worst = 0.0
        checked = 0
        for trial in range(20):
            rng = np.random.default_rng(9000 + trial)
            config = HccConfig(
                input_dim=6, encoder_dim=8, latent_dim=8, context_dim=8,
                lambda_del=0.8, lambda_kl=0.05, lambda_ent=0.4, lambda_geo=0.3,
            )
            t_count = 5
            feat = TraceFeatures(
                trace_id=f"g{trial}",
                states=rng.normal(size=(t_count, 6)),
                target_uncertainty=rng.normal(size=t_count),
                target_geometry=rng.normal(size=t_count),
                boundary=int(rng.integers(0, t_count + 1)),
                delete_labels=rng.integers(0, 2, size=t_count).astype(float),
            )
            seeds = [int(rng.integers(1 << 20))]
            params = init_params(config, seed=trial)
            grads, _ = gradients(params, [feat], config, seeds)
            step = 1e-5
            for name in params:
                arr = np.atleast_1d(np.asarray(params[name], dtype=float))
                g = np.atleast_1d(np.asarray(grads[name]))
                for idx in rng.choice(arr.size, size=min(3, arr.size), replace=False):
                    base = arr.flat[idx]

                    def shifted(v):
                        other = {k: np.array(p, dtype=float, copy=True) for k, p in params.items()}
                        a = np.atleast_1d(other[name])
                        a.flat[idx] = v
                        other[name] = (
                            a.reshape(np.shape(params[name]))
                            if np.shape(params[name]) else np.float64(a[0])
                        )
                        return batch_loss(other, [feat], config, seeds).total

                    fd = (shifted(base + step) - shifted(base - step)) / (2 * step)
                    an = float(g.flat[idx])
                    if abs(fd - an) <= 1e-7:
                        # agreement below central-difference noise (~1e-10 at
                        # this loss scale): some gradients, e.g. the cut-head
                        # bias, are exactly zero by softmax shift invariance
                        checked += 1
                        continue
                    rel = abs(fd - an) / max(abs(fd), abs(an), 1e-6)
                    assert rel <= 1e-4, f"trial {trial} {name}[{idx}]: rel {rel:.2e}"
                    worst = max(worst, rel)
                    checked += 1
        elapsed = time.monotonic() - started
        assert elapsed < 60.0, f"took {elapsed:.1f}s"
        report("gradient correctness",
               f"{checked} coords over 20 configs, worst rel err {worst:.2e} <= 1e-4, "
               f"{elapsed:.1f}s < 60s")


class TestBoundaryRecovery:
    def test_trained_proxy_recovers_planted_boundaries(self):
        started = time.monotonic()
        full = generate(SynthConfig(count=250, seed=ACCEPTANCE_SYNTH_SEED))
        train_corpus, held_corpus = _split(full, 200)
        assert len(train_corpus) == 200 and len(held_corpus) == 50
        config = HccConfig(input_dim=full.dim, seed=ACCEPTANCE_MODEL_SEED)
        params, norm, history = train(train_corpus, config)
        train_seconds = time.monotonic() - started
        results = predict_corpus(params, held_corpus, config, norm)
        errors = np.array(
            [r.c_hat - held_corpus.annotations[r.trace_id].boundary for r in results]
        )
        exact = float((errors == 0).mean())
        near = float((np.abs(errors) <= 1).mean())
        assert exact >= 0.8, f"exact accuracy {exact:.2f} < 0.8"
        assert near >= 0.95, f"within-1 accuracy {near:.2f} < 0.95"
        assert train_seconds < 300.0, f"training took {train_seconds:.0f}s"
        report("boundary recovery",
               f"held-out exact {exact:.2f} >= 0.80, within-1 {near:.2f} >= 0.95, "
               f"training {train_seconds:.0f}s < 300s")


class TestPairedTableSignature:
    def test_geometry_deltas_negative_with_ci_excluding_zero(self):
        corpus = generate(SynthConfig(count=200, seed=73))
        metrics = ("displacement", "forward_progress", "disp_per_token", "prog_per_token")
        pairs = {name: [] for name in metrics}
        for trace, ann in corpus.annotated_traces():
            gm = group_means(geometry_series(trace, 1e-8), ann)
            for name in metrics:
                pairs[name].append((gm.removed[name], gm.retained[name]))
        table = paired_table(pairs, resamples=2000, seed=5)
        details = []
        for row in table:
            delta = row.removed_mean - row.retained_mean
            assert delta < 0, f"{row.metric}: delta {delta:.4f} not negative"
            assert row.frac_removed_lower >= 0.75, (
                f"{row.metric}: frac lower {row.frac_removed_lower:.2f} < 0.75"
            )
            assert row.ci_high < 0, f"{row.metric}: CI [{row.ci_low:.3f}, {row.ci_high:.3f}] touches 0"
            details.append(f"{row.metric} d={delta:.3f} lower={row.frac_removed_lower:.2f}")
        report("paired-table signature", "; ".join(details))


class TestRandomCutContract:
    def test_mean_removed_tokens_matches_target(self):
        corpus = generate(SynthConfig(count=200, seed=74))
        sentence_lengths = [
            s.token_count for trace in corpus.traces for s in trace.sentences
        ]
        mean_sentence = float(np.mean(sentence_lengths))
        for target in (0.0, 40.0, 120.0):
            cuts = {t.id: random_cut(t, target) for t in corpus.traces}
            achieved = mean_removed_tokens(cuts)
            assert abs(achieved - target) <= mean_sentence, (
                f"target {target}: got {achieved:.1f}, "
                f"gap {abs(achieved - target):.1f} > {mean_sentence:.1f}"
            )
        report("random-cut contract",
               f"targets 0/40/120 matched within mean sentence length {mean_sentence:.1f}")


class TestPipelineDeterminism:
    def _pipeline(self, root):
        corpus = root / "corpus.jsonl"
        synth_cfg = root / "synth.cfg"
        synth_cfg.write_text("count=12\nt_min=6\nt_max=10\ndim=8\nseed=21\n")
        assert run(["synth", "--output", str(corpus), "--config", str(synth_cfg)]) == 0
        train_cfg = root / "train.cfg"
        train_cfg.write_text(
            "encoder_dim=12\nlatent_dim=4\ncontext_dim=8\nepochs=4\nbatch_size=4\n"
        )
        assert run([
            "train", "--input", str(corpus), "--output", str(root / "model"),
            "--config", str(train_cfg), "--seed", "2",
        ]) == 0
        assert run([
            "predict", "--input", str(corpus),
            "--model", str(root / "model" / "model.hccm"),
            "--output", str(root / "pred"),
        ]) == 0
        assert run([
            "cut", "--input", str(corpus), "--output", str(root / "cuts"),
            "--mode", "model", "--predictions", str(root / "pred" / "predictions.csv"),
        ]) == 0
        assert run([
            "export-sft", "--input", str(corpus),
            "--cuts", str(root / "cuts" / "cut_summary.csv"),
            "--output", str(root / "sft.jsonl"),
        ]) == 0
        assert run([
            "paired-stats", "--input", str(corpus), "--output", str(root / "paired"),
            "--resamples", "500", "--seed", "6",
        ]) == 0
        assert run([
            "diagnose-uncertainty", "--input", str(corpus),
            "--output", str(root / "unc"), "--bins", "5",
        ]) == 0

        import hashlib

        digests = {}
        for p in sorted(root.rglob("*")):
            if p.is_file():
                digests[str(p.relative_to(root))] = hashlib.sha256(p.read_bytes()).hexdigest()
        return digests

    def test_full_rerun_byte_identical(self, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        a.mkdir(), b.mkdir()
        first = self._pipeline(a)
        second = self._pipeline(b)
        assert first == second
        report("determinism",
               f"two full pipeline runs, {len(first)} files (checkpoint, CIs, figures) byte-identical")


class TestSelfConsistencyArithmetic:
    def test_hand_computed_quantities(self):
        t1 = make_trace(
            trace_id="a",
            logprobs_by_sentence=((-1.0,) * 3, (-1.0,) * 4, (-1.0,) * 3, (-1.0,) * 2),
            entropies_by_sentence=((0.5,) * 3, (0.5,) * 4, (0.5,) * 3, (0.5,) * 2),
            answer_nll=(3.0, 2.5, 2.0, 1.5, 1.2),
            answer_entropy=(1.0, 0.9, 0.8, 0.7, 0.6),
            hidden=np.zeros((5, 3)),
        )  # T=4, 12 tokens
        t2 = make_trace(
            trace_id="b",
            logprobs_by_sentence=((-1.0,) * 10, (-1.0,) * 10),
            entropies_by_sentence=((0.5,) * 10, (0.5,) * 10),
            answer_nll=(3.0, 2.0, 1.0),
            answer_entropy=(1.0, 0.8, 0.6),
            hidden=np.zeros((3, 3)),
        )  # T=2, 20 tokens
        corpus = corpus_of([t1, t2])
        predictions = {"a": (3, [0, 0, 0, 1]), "b": (2, [0, 0])}
        rep = self_consistency(predictions, corpus)
        assert rep.phase_rate == 0.5  # only trace a cut early
        assert rep.sentence_ratio == (1 / 4 + 0 / 2) / 2  # exactly 0.125
        assert rep.avg_len == 16.0  # (12 + 20) / 2
        report("self-consistency arithmetic",
               f"phase {rep.phase_rate} == 0.5, ratio {rep.sentence_ratio} == 0.125, "
               f"len {rep.avg_len} == 16.0")
