from __future__ import annotations

import csv
import json
import hashlib
from pathlib import Path

import pytest

from hcc.cli import run
from hcc.corpus import parse_corpus


def sha_tree(root: Path) -> dict[str, str]:
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file():
            out[str(p.relative_to(root))] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


@pytest.fixture(scope="module")
def small_corpus_path(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli-corpus")
    path = root / "corpus.jsonl"
    config = root / "synth.cfg"
    config.write_text("count=12\nt_min=5\nt_max=9\ndim=8\nseed=5\n")
    assert run(["synth", "--output", str(path), "--config", str(config)]) == 0
    return path


class TestExitCodes:
    def test_help_is_success(self, capsys):
        assert run(["--help"]) == 0
        assert "usage" in capsys.readouterr().out

    def test_unknown_subcommand_is_usage_error(self):
        assert run(["frobnicate"]) == 2

    def test_unknown_flag_is_usage_error(self):
        assert run(["validate", "--nope"]) == 2

    def test_missing_file_is_data_error(self, tmp_path, capsys):
        assert run(["validate", "--input", str(tmp_path / "absent.jsonl")]) == 1
        assert "error:" in capsys.readouterr().err


class TestValidate:
    def test_good_corpus(self, small_corpus_path, capsys):
        assert run(["validate", "--input", str(small_corpus_path)]) == 0
        assert "0 violations" in capsys.readouterr().out

    def test_violations_reported(self, small_corpus_path, tmp_path, capsys):
        corrupted = tmp_path / "bad.jsonl"
        lines = small_corpus_path.read_text().splitlines()
        lines[1] = lines[1].replace('"logprobs": [-', '"logprobs": [0.25, -', 1)
        # keep token_count consistent by dropping one score back off
        obj = json.loads(lines[1])
        s0 = obj["sentences"][0]
        s0["logprobs"] = s0["logprobs"][: s0["token_count"]]
        s0["logprobs"][0] = 0.25
        lines[1] = json.dumps(obj, sort_keys=True)
        corrupted.write_text("\n".join(lines) + "\n")
        (tmp_path / "bad.hcc1").write_bytes(
            small_corpus_path.with_suffix(".hcc1").read_bytes()
        )
        assert run(["validate", "--input", str(corrupted)]) == 1
        out = capsys.readouterr().out
        assert "logprobs[1]" in out and "violations" in out


class TestSynth:
    def test_deterministic_files(self, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        assert run(["synth", "--output", str(a), "--count", "6", "--seed", "3"]) == 0
        assert run(["synth", "--output", str(b), "--count", "6", "--seed", "3"]) == 0
        assert a.read_bytes() == b.read_bytes()
        assert a.with_suffix(".hcc1").read_bytes() == b.with_suffix(".hcc1").read_bytes()

    def test_seed_changes_output(self, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        run(["synth", "--output", str(a), "--count", "6", "--seed", "3"])
        run(["synth", "--output", str(b), "--count", "6", "--seed", "4"])
        assert a.read_bytes() != b.read_bytes()

    def test_summary_printed(self, tmp_path, capsys):
        run(["synth", "--output", str(tmp_path / "c.jsonl"), "--count", "5", "--seed", "1"])
        out = capsys.readouterr().out
        assert "seed=1" in out and "wrote 5 traces" in out


class TestDiagnostics:
    def test_uncertainty_outputs(self, small_corpus_path, tmp_path):
        out = tmp_path / "unc"
        assert run([
            "diagnose-uncertainty", "--input", str(small_corpus_path),
            "--output", str(out), "--bins", "4",
        ]) == 0
        for name in (
            "progressive_curves.csv", "boundary_quadruple.csv", "perturbations.csv",
            "progressive_curves.png", "boundary_quadruple.png", "perturbation_ecdf.png",
        ):
            assert (out / name).exists(), name

    def test_uncertainty_json_mode(self, small_corpus_path, tmp_path):
        out = tmp_path / "unc-json"
        assert run([
            "diagnose-uncertainty", "--input", str(small_corpus_path),
            "--output", str(out), "--bins", "4", "--json", "--no-figures",
        ]) == 0
        assert (out / "progressive_curves.json").exists()
        assert not (out / "progressive_curves.csv").exists()
        assert not (out / "progressive_curves.png").exists()

    def test_geometry_outputs(self, small_corpus_path, tmp_path):
        out = tmp_path / "geo"
        assert run([
            "diagnose-geometry", "--input", str(small_corpus_path), "--output", str(out),
        ]) == 0
        assert (out / "geometry_series.csv").exists()
        assert (out / "geometry_group_means.csv").exists()
        assert (out / "geometry_overview.png").exists()

    def test_paired_stats(self, small_corpus_path, tmp_path):
        out = tmp_path / "paired"
        assert run([
            "paired-stats", "--input", str(small_corpus_path), "--output", str(out),
            "--resamples", "200", "--seed", "7",
        ]) == 0
        with (out / "paired_table.csv").open() as fh:
            rows = list(csv.DictReader(fh))
        assert {r["metric"] for r in rows} == {
            "displacement", "forward_progress", "efficiency",
            "disp_per_token", "prog_per_token", "curvature",
        }
        assert (out / "paired_table.txt").exists()
        assert (out / "paired_deltas.png").exists()


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipeline")
    corpus = root / "corpus.jsonl"
    cfg = root / "synth.cfg"
    cfg.write_text("count=10\nt_min=5\nt_max=8\ndim=6\nseed=2\n")
    assert run(["synth", "--output", str(corpus), "--config", str(cfg)]) == 0
    train_cfg = root / "train.cfg"
    train_cfg.write_text(
        "encoder_dim=8\nlatent_dim=4\ncontext_dim=6\nepochs=3\nbatch_size=4\n"
    )
    model_dir = root / "model"
    assert run([
        "train", "--input", str(corpus), "--output", str(model_dir),
        "--config", str(train_cfg), "--seed", "0", "--no-figures",
    ]) == 0
    return root


class TestPipeline:
    def test_train_wrote_artifacts(self, workdir):
        assert (workdir / "model" / "model.hccm").exists()
        assert (workdir / "model" / "training_history.csv").exists()

    def test_predict_and_consumers(self, workdir):
        corpus = workdir / "corpus.jsonl"
        model = workdir / "model" / "model.hccm"
        pred_dir = workdir / "pred"
        assert run([
            "predict", "--input", str(corpus), "--model", str(model),
            "--output", str(pred_dir), "--no-figures",
        ]) == 0
        preds = pred_dir / "predictions.csv"
        assert preds.exists() and (pred_dir / "predictions_sentences.csv").exists()

        cut_dir = workdir / "cuts"
        assert run([
            "cut", "--input", str(corpus), "--output", str(cut_dir),
            "--mode", "model", "--predictions", str(preds), "--no-figures",
        ]) == 0
        summary = cut_dir / "cut_summary.csv"
        assert summary.exists()

        sft = workdir / "sft.jsonl"
        assert run([
            "export-sft", "--input", str(corpus), "--cuts", str(summary),
            "--output", str(sft),
        ]) == 0
        lines = [json.loads(x) for x in sft.read_text().splitlines()]
        assert len(lines) == 10
        assert [o["id"] for o in lines] == sorted(o["id"] for o in lines)

        sc_dir = workdir / "sc"
        assert run([
            "self-consistency", "--input", str(corpus), "--predictions", str(preds),
            "--output", str(sc_dir), "--no-figures",
        ]) == 0
        assert (sc_dir / "self_consistency.csv").exists()

    def test_cut_modes_labels_and_random(self, workdir):
        corpus = workdir / "corpus.jsonl"
        label_dir = workdir / "cuts-labels"
        assert run([
            "cut", "--input", str(corpus), "--output", str(label_dir),
            "--mode", "labels", "--no-figures",
        ]) == 0
        with (label_dir / "cut_summary.csv").open() as fh:
            label_rows = {r["trace_id"]: r for r in csv.DictReader(fh)}
        parsed = parse_corpus(corpus)
        for tid, ann in parsed.annotations.items():
            assert int(label_rows[tid]["boundary"]) == ann.boundary

        rand_dir = workdir / "cuts-random"
        assert run([
            "cut", "--input", str(corpus), "--output", str(rand_dir),
            "--mode", "random", "--target-tokens", "20", "--no-figures",
        ]) == 0
        assert (rand_dir / "cut_summary.csv").exists()

        match_dir = workdir / "cuts-match"
        assert run([
            "cut", "--input", str(corpus), "--output", str(match_dir),
            "--mode", "random", "--match-cuts", str(label_dir / "cut_summary.csv"),
            "--no-figures",
        ]) == 0

    def test_missing_model_args_is_data_error(self, workdir):
        corpus = workdir / "corpus.jsonl"
        assert run([
            "cut", "--input", str(corpus), "--output", str(workdir / "x"),
            "--mode", "model", "--no-figures",
        ]) == 1


class TestEndToEndDeterminism:
    def _pipeline(self, root: Path) -> dict[str, str]:
        corpus = root / "corpus.jsonl"
        cfg = root / "synth.cfg"
        cfg.write_text("count=8\nt_min=5\nt_max=8\ndim=6\nseed=9\n")
        assert run(["synth", "--output", str(corpus), "--config", str(cfg)]) == 0
        train_cfg = root / "train.cfg"
        train_cfg.write_text(
            "encoder_dim=8\nlatent_dim=4\ncontext_dim=6\nepochs=2\nbatch_size=4\n"
        )
        assert run([
            "train", "--input", str(corpus), "--output", str(root / "model"),
            "--config", str(train_cfg), "--seed", "1",
        ]) == 0
        assert run([
            "predict", "--input", str(corpus), "--model", str(root / "model" / "model.hccm"),
            "--output", str(root / "pred"),
        ]) == 0
        assert run([
            "cut", "--input", str(corpus), "--output", str(root / "cuts"),
            "--mode", "model", "--predictions", str(root / "pred" / "predictions.csv"),
        ]) == 0
        assert run([
            "export-sft", "--input", str(corpus), "--cuts",
            str(root / "cuts" / "cut_summary.csv"), "--output", str(root / "sft.jsonl"),
        ]) == 0
        assert run([
            "paired-stats", "--input", str(corpus), "--output", str(root / "paired"),
            "--resamples", "150", "--seed", "3",
        ]) == 0
        return sha_tree(root)

    def test_two_runs_byte_identical(self, tmp_path):
        a = tmp_path / "run-a"
        b = tmp_path / "run-b"
        a.mkdir(), b.mkdir()
        assert self._pipeline(a) == self._pipeline(b)
