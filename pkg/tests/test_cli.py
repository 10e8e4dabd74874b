"""CLI behavior: formats, exit codes, run persistence, report artifacts."""

import json

import numpy as np
import pytest

from tokencert.cli import main
from tokencert.coding import compress_weights, write_artifact
from tokencert.corpus import synthetic_corpus, write_corpus
from tokencert.trace import RiskTrace, TraceHeader, write_binary, write_text


@pytest.fixture()
def hand_trace(tmp_path):
    """The 3-record hand-computed example from the bound oracle."""
    trace = RiskTrace(
        header=TraceHeader(vocab_size=4, total_tokens=3, model_id="hand"),
        p=np.array([1.0, 0.5, 0.25]),
        rank=np.zeros(3, dtype=np.uint32),
        doc_start=np.array([True, False, False]),
    )
    path = tmp_path / "hand.trc"
    write_text(trace, path)
    return trace, path


class TestEvalBound:
    def test_hand_example_matches_library(self, tmp_path, hand_trace, capsys):
        _, path = hand_trace
        out = tmp_path / "run"
        code = main([
            "eval-bound", "--trace", str(path), "--c-bits", "1",
            "--delta", "0.5", "--alpha-mode", "global", "--alpha", "0.5",
            "--out", str(out),
        ])
        assert code == 0
        data = json.loads((out / "bound.json").read_text())
        res = data["bpd"]
        assert res["empirical_term"] == pytest.approx(1.3643698014638272, rel=1e-12)
        assert res["complexity_term"] == pytest.approx(1.3669307052403213, rel=1e-12)
        assert res["subsample_term"] == pytest.approx(1.1160942471938476, rel=1e-12)
        assert res["bound"] == pytest.approx(3.8473947538979960, rel=1e-12)
        assert (out / "bound.csv").exists()
        assert (out / "bound_terms.png").exists()
        assert json.loads((out / "config.json").read_text())["delta"] == 0.5
        assert "VACUOUS" in capsys.readouterr().out

    def test_text_and_binary_identical_results(self, tmp_path):
        rng = np.random.default_rng(0)
        n = 64
        doc = np.zeros(n, dtype=bool)
        doc[0] = True
        trace = RiskTrace(
            header=TraceHeader(vocab_size=32, total_tokens=500, tracked_k=(1, 5)),
            p=rng.uniform(0.001, 1.0, n),
            rank=rng.integers(1, 30, n).astype(np.uint32),
            doc_start=doc,
        )
        t_path, b_path = tmp_path / "t.trc", tmp_path / "t.rtrc"
        write_text(trace, t_path)
        write_binary(trace, b_path)
        outs = []
        for i, path in enumerate((t_path, b_path)):
            out = tmp_path / f"run{i}"
            assert main([
                "eval-bound", "--trace", str(path), "--c-bits", "100",
                "--alpha-mode", "grid", "--top-k", "1,5", "--out", str(out),
            ]) == 0
            outs.append(json.loads((out / "bound.json").read_text()))
        assert outs[0] == outs[1]

    def test_malformed_trace_exits_2_with_line(self, tmp_path, capsys):
        bad = tmp_path / "bad.trc"
        bad.write_text('{"V": 8, "m": 100}\n{"p": 0.5, "doc_start": true}\n{"p": -3}\n')
        code = main(["eval-bound", "--trace", str(bad), "--c-bits", "8"])
        assert code == 2
        assert "line" in capsys.readouterr().err

    def test_untracked_k_exits_2(self, tmp_path, hand_trace, capsys):
        _, path = hand_trace
        code = main([
            "eval-bound", "--trace", str(path), "--c-bits", "1",
            "--top-k", "5", "--out", str(tmp_path / "r"),
        ])
        assert code == 2
        assert "unsupported" in capsys.readouterr().err.lower()

    def test_require_nonvacuous_exit_3(self, tmp_path, hand_trace):
        _, path = hand_trace
        code = main([
            "eval-bound", "--trace", str(path), "--c-bits", "1",
            "--delta", "0.5", "--alpha-mode", "global", "--alpha", "0.5",
            "--require-nonvacuous", "--out", str(tmp_path / "r"),
        ])
        assert code == 3

    def test_artifact_supplies_complexity(self, tmp_path, hand_trace):
        _, path = hand_trace
        artifact = compress_weights(np.linspace(-1, 1, 100), 16)
        art_path = tmp_path / "model.tcar"
        write_artifact(artifact, art_path)
        out = tmp_path / "run"
        assert main([
            "eval-bound", "--trace", str(path), "--artifact", str(art_path),
            "--alpha-mode", "global", "--alpha", "0.5", "--out", str(out),
        ]) == 0
        res = json.loads((out / "bound.json").read_text())["bpd"]
        assert res["complexity_bits"] == artifact.total_bits

    def test_custom_alpha_grid(self, tmp_path, hand_trace):
        _, path = hand_trace
        out = tmp_path / "run"
        assert main([
            "eval-bound", "--trace", str(path), "--c-bits", "1",
            "--alpha-mode", "grid", "--alpha-grid", "0.5,1.0",
            "--out", str(out),
        ]) == 0
        plan = json.loads((out / "smoothing_plan.json").read_text())
        assert plan["global_alpha"] in (0.5, 1.0)

    def test_nearly_one_delta_reduces_to_empirical(self, tmp_path, hand_trace):
        # delta -> 1 with tiny complexity: penalties approach zero.
        _, path = hand_trace
        out = tmp_path / "run"
        assert main([
            "eval-bound", "--trace", str(path), "--c-bits", "1",
            "--delta", "0.999999999", "--alpha-mode", "global", "--alpha", "1.0",
            "--out", str(out),
        ]) == 0
        res = json.loads((out / "bound.json").read_text())["bpd"]
        assert res["bound"] == pytest.approx(res["empirical_term"], abs=1e-6)


class TestConfigHandling:
    def test_config_file_with_flag_override(self, tmp_path, hand_trace):
        _, path = hand_trace
        cfg = tmp_path / "run.cfg"
        cfg.write_text("delta = 0.5\nalpha_mode = global\nalpha = 0.5\n")
        out = tmp_path / "run"
        assert main([
            "eval-bound", "--trace", str(path), "--c-bits", "1",
            "--config", str(cfg), "--alpha", "0.25", "--out", str(out),
        ]) == 0
        resolved = json.loads((out / "config.json").read_text())
        assert resolved["delta"] == 0.5       # from file
        assert resolved["alpha"] == 0.25      # flag wins
        assert resolved["command"] == "eval-bound"

    def test_unknown_config_key_rejected(self, tmp_path, hand_trace, capsys):
        _, path = hand_trace
        cfg = tmp_path / "run.cfg"
        cfg.write_text("nonsense = 1\n")
        assert main([
            "eval-bound", "--trace", str(path), "--c-bits", "1",
            "--config", str(cfg),
        ]) == 2


class TestPipelineCommands:
    def test_markov_run_and_report(self, tmp_path, capsys):
        corpus_path = tmp_path / "corpus.txt"
        write_corpus(synthetic_corpus(20_000, vocab_size=64, seed=1), corpus_path)
        run_root = tmp_path / "runs"
        for order in (0, 1):
            assert main([
                "train-markov", "--corpus", str(corpus_path),
                "--order", str(order), "--seed", "3",
                "--subsample", "1000", "--out", str(run_root / f"k{order}"),
            ]) == 0
            assert (run_root / f"k{order}" / "model.tcar").exists()
            assert (run_root / f"k{order}" / "trace.trc").exists()
        capsys.readouterr()
        out = tmp_path / "summary"
        assert main(["report", "--run-root", str(run_root),
                     "--out", str(out)]) == 0
        md = (out / "summary.md").read_text()
        assert "markov-k0" in md and "markov-k1" in md
        assert (out / "summary.csv").exists()
        assert (out / "summary.png").exists()
        rows = (out / "summary.csv").read_text().strip().splitlines()
        assert len(rows) == 3  # header + two runs

    def test_report_empty_dir_warns(self, tmp_path, capsys):
        out = tmp_path / "summary"
        assert main(["report", "--run-root", str(tmp_path / "none"),
                     "--out", str(out)]) == 0
        assert "no runs" in capsys.readouterr().err

    def test_train_toy_sweep(self, tmp_path):
        corpus_path = tmp_path / "corpus.txt"
        write_corpus(synthetic_corpus(3000, vocab_size=12, seed=2), corpus_path)
        out = tmp_path / "toy"
        assert main([
            "train-toy", "--corpus", str(corpus_path),
            "--parametrization", "dense,monarch", "--context", "2",
            "--steps", "50", "--seed", "4", "--subsample", "400",
            "--nblocks", "4", "--out", str(out),
        ]) == 0
        sweep = (out / "sweep.csv").read_text().strip().splitlines()
        assert sweep[0].startswith("parametrization,")
        assert len(sweep) == 3
        assert (out / "model-monarch.tcar").exists()

    def test_optimize_alpha_outputs_curve(self, tmp_path, hand_trace):
        _, path = hand_trace
        out = tmp_path / "opt"
        assert main([
            "optimize-alpha", "--trace", str(path), "--c-bits", "1",
            "--mode", "per-token", "--buckets", "2", "--out", str(out),
        ]) == 0
        assert (out / "alpha_curve.csv").exists()
        assert (out / "alpha_curve.png").exists()
        plan = json.loads((out / "smoothing_plan.json").read_text())
        assert plan["mode"] == "per_token"

    def test_compress_deflate_path(self, tmp_path, capsys):
        payload = tmp_path / "blob.bin"
        payload.write_bytes(b"\x00" * 4096)
        assert main(["compress", "--deflate", str(payload),
                     "--out", str(tmp_path / "c")]) == 0
        summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert summary["scheme"] == "deflate"
        assert summary["payload_bits"] < 800

    def test_gen_sequences_and_memorization(self, tmp_path):
        out = tmp_path / "seqs"
        assert main(["gen-sequences", "--count", "40", "--seed", "5",
                     "--out", str(out)]) == 0
        assert (out / "structured.corpus").exists()
        assert (out / "random.corpus").exists()
        mem_out = tmp_path / "mem"
        assert main([
            "memorization", "--levels", "8,2", "--count", "60", "--seed", "6",
            "--epochs", "10", "--out", str(mem_out),
        ]) == 0
        assert (mem_out / "memorization.csv").exists()
        assert (mem_out / "memorization.png").exists()

    def test_seed_required_for_stochastic_commands(self, capsys, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["gen-corpus", "--tokens", "100", "--out", str(tmp_path)])
        assert exc.value.code == 2
