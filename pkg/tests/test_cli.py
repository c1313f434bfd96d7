"""Command-line interface: subcommands, exit codes, determinism."""

import hashlib
import json

import pytest

from n400surprisal.cli import main
from n400surprisal.pipeline import shipped_data_dir

SYNTH = shipped_data_dir() / "synthetic"


def small_config(tmp_path, **extra):
    """A fast desk-scale configuration against the shipped synthetic data."""
    values = {
        "train_corpus": str(SYNTH / "train.txt"),
        "corpus_dir": str(SYNTH / "corpus"),
        "expected_dir": str(SYNTH / "expected"),
        "output_dir": str(tmp_path / "out"),
        "seed": 7,
        "epochs": 6,
        "embedding_size": 24,
        "hidden_sizes": "24,24",
        "batch_size": 32,
        "bptt_window": 16,
        "vocab_size": 1000,
    }
    values.update(extra)
    digest = hashlib.sha256(repr(sorted(values.items())).encode()).hexdigest()[:8]
    path = tmp_path / f"run-{digest}.conf"
    path.write_text("".join(f"{k} = {v}\n" for k, v in values.items()))
    return path


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    tmp_path = tmp_path_factory.mktemp("train")
    config = small_config(tmp_path)
    assert main(["train", "--config", str(config)]) == 0
    return tmp_path / "out", config


class TestTrain:
    def test_writes_model_vocab_and_log(self, trained):
        out, _ = trained
        assert (out / "model.n4lm").exists()
        assert (out / "model.vocab").exists()
        log = (out / "train_log.txt").read_text()
        assert "# config_hash:" in log and "# seed: 7" in log
        assert "holdout_perplexity" in log

    def test_same_seed_same_weight_hash(self, trained, tmp_path):
        out, _ = trained
        config = small_config(tmp_path)
        assert main(["train", "--config", str(config)]) == 0
        h1 = hashlib.sha256((out / "model.n4lm").read_bytes()).hexdigest()
        h2 = hashlib.sha256((tmp_path / "out" / "model.n4lm").read_bytes()).hexdigest()
        assert h1 == h2

    def test_missing_corpus_key_exits_1_naming_key(self, tmp_path, caplog):
        config = tmp_path / "bare.conf"
        config.write_text(f"output_dir = {tmp_path / 'out'}\n")
        assert main(["train", "--config", str(config)]) == 1
        assert "train_corpus" in caplog.text

    def test_partial_files_removed_on_failure(self, tmp_path):
        bad_corpus = tmp_path / "corpus.txt"
        bad_corpus.write_text("only one sentence\n")  # training needs >= 2
        config = small_config(tmp_path, train_corpus=str(bad_corpus))
        assert main(["train", "--config", str(config)]) == 1
        out = tmp_path / "out"
        assert not (out / "model.n4lm").exists()
        assert not (out / "train_log.txt").exists()


class TestSurprisal:
    def test_writes_row_per_stimulus(self, trained, tmp_path):
        out, config = trained
        run_out = tmp_path / "sout"
        code = main(["surprisal", "--config", str(config),
                     "--model", str(out / "model.n4lm"),
                     "--output-dir", str(run_out)])
        assert code == 0
        rows = [l for l in (run_out / "surprisals.csv").read_text().splitlines()
                if l and not l.startswith("#")]
        assert len(rows) - 1 == 120  # header + one row per stimulus

    def test_corrupt_weight_file_exits_1(self, trained, tmp_path):
        _, config = trained
        corrupt = tmp_path / "corrupt.n4lm"
        corrupt.write_bytes(b"NOT A MODEL FILE")
        assert main(["surprisal", "--config", str(config),
                     "--model", str(corrupt),
                     "--output-dir", str(tmp_path / "x")]) == 1

    def test_experiment_filter(self, trained, tmp_path):
        out, config = trained
        code = main(["surprisal", "--config", str(config),
                     "--model", str(out / "model.n4lm"),
                     "--experiments", "synth_typicality",
                     "--output-dir", str(tmp_path / "f")])
        assert code == 0


@pytest.fixture(scope="module")
def surprisals(trained, tmp_path_factory):
    out, config = trained
    run_out = tmp_path_factory.mktemp("surp")
    assert main(["surprisal", "--config", str(config),
                 "--model", str(out / "model.n4lm"),
                 "--output-dir", str(run_out)]) == 0
    return run_out / "surprisals.csv", config


class TestAnalyze:

    def test_full_report_from_csv(self, surprisals, tmp_path):
        csv_path, config = surprisals
        out = tmp_path / "rep"
        assert main(["analyze", "--config", str(config),
                     "--surprisals", str(csv_path),
                     "--output-dir", str(out)]) == 0
        payload = json.loads((out / "report.json").read_text())
        assert payload["experiments"][0]["comparisons"][0]["classification"] == "FULL_MATCH"
        assert (out / "report.txt").exists()
        assert (out / "fits" / "synth_typicality.txt").exists()

    def test_alpha_override_propagates(self, surprisals, tmp_path):
        csv_path, config = surprisals
        out = tmp_path / "strict"
        assert main(["analyze", "--config", str(config),
                     "--surprisals", str(csv_path),
                     "--alpha", "1e-300",
                     "--output-dir", str(out)]) == 0
        payload = json.loads((out / "report.json").read_text())
        assert payload["alpha"] == 1e-300
        assert payload["experiments"][0]["comparisons"][0]["classification"] == "MISMATCH"

    def test_empty_surprisal_file_exits_1(self, trained, tmp_path):
        _, config = trained
        empty = tmp_path / "empty.csv"
        empty.write_text("experiment,item,condition,target,surprisal,excluded,reason\n")
        assert main(["analyze", "--config", str(config),
                     "--surprisals", str(empty),
                     "--output-dir", str(tmp_path / "e")]) == 1


class TestPipeline:
    def test_end_to_end_and_resume(self, tmp_path):
        config = small_config(tmp_path)
        assert main(["pipeline", "--config", str(config)]) == 0
        out = tmp_path / "out"
        payload = json.loads((out / "report.json").read_text())
        assert payload["experiments"][0]["status"] == "ok"
        model = out / "model.n4lm"
        assert model.exists()

        # resume: model flag skips training and must not need train_corpus
        resume_out = tmp_path / "resume"
        config2 = small_config(tmp_path, train_corpus="", output_dir=str(resume_out))
        assert main(["pipeline", "--config", str(config2), "--model", str(model)]) == 0
        assert not (resume_out / "model.n4lm").exists()
        assert (resume_out / "report.json").exists()

    def test_conflicting_train_and_load_is_usage_error(self, tmp_path):
        config = small_config(tmp_path)
        with pytest.raises(SystemExit) as exc:
            main(["pipeline", "--config", str(config),
                  "--model", "whatever.n4lm",
                  "--train-corpus", str(SYNTH / "train.txt")])
        assert exc.value.code == 2

    def test_identical_config_hash_byte_identical_outputs(self, tmp_path):
        config_a = small_config(tmp_path, output_dir=str(tmp_path / "a"))
        config_b = small_config(tmp_path, output_dir=str(tmp_path / "b"))
        assert main(["pipeline", "--config", str(config_a)]) == 0
        assert main(["pipeline", "--config", str(config_b)]) == 0
        for name in ("report.json", "report.txt", "surprisals.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
        ja = json.loads((tmp_path / "a" / "report.json").read_text())
        jb = json.loads((tmp_path / "b" / "report.json").read_text())
        assert ja["config_hash"] == jb["config_hash"]


class TestUsage:
    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0
        out = capsys.readouterr().out
        assert "n400surprisal" in out and "weight format" in out

    def test_unknown_flag_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["train", "--nonsense"])
        assert exc.value.code == 2

    def test_unknown_config_key_exits_2(self, tmp_path):
        config = tmp_path / "bad.conf"
        config.write_text("no_such_key = 1\n")
        with pytest.raises(SystemExit) as exc:
            main(["train", "--config", str(config)])
        assert exc.value.code == 2
