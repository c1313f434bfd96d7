"""Command-line entry point: train, surprisal, analyze, pipeline.

Configuration comes from a plain-text key=value file with command-line
overrides; the effective configuration (plus SHA-256 digests of every input
file) is hashed, and the hash and seed are embedded in every output so a
run can be reproduced byte-for-byte.  Logs go to standard error; data goes
to files only.

Exit codes: 0 success, 1 operational failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from dataclasses import dataclass, fields
from pathlib import Path

from n400surprisal import WEIGHT_FORMAT_VERSION, __version__
from n400surprisal.analysis import read_surprisal_csv, write_surprisal_csv
from n400surprisal.lm.estimator import LstmLanguageModel
from n400surprisal.pipeline import (
    analyze_records,
    bundle_to_json,
    bundle_to_table,
    load_corpus_dir,
    load_expected_dir,
    load_experiment_configs,
    run_pipeline,
    score_corpus,
)
from n400surprisal.stats.report import format_fit_report

log = logging.getLogger("n400surprisal")


class UsageError(ValueError):
    """Bad flag combinations or malformed configuration: exit code 2."""


class MissingInputError(RuntimeError):
    """Required input absent or unreadable: operational failure, exit code 1."""


@dataclass(frozen=True)
class RunConfig:
    corpus_dir: str = ""
    expected_dir: str = ""
    train_corpus: str = ""
    model: str = ""
    output_dir: str = "out"
    surprisals: str = ""
    analysis_configs: str = ""
    experiments: str = ""
    exclude: str = ""
    seed: int = 0
    alpha: float = 0.05
    epochs: int = 10
    learning_rate: float = 0.5
    batch_size: int = 32
    bptt_window: int = 16
    clip_norm: float = 5.0
    holdout_fraction: float = 0.1
    embedding_size: int = 64
    hidden_sizes: str = "64,64"
    vocab_size: int = 10000

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise UsageError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.seed < 0:
            raise UsageError("seed must be non-negative")

    def hidden_tuple(self) -> tuple[int, ...]:
        return tuple(int(h) for h in self.hidden_sizes.split(",") if h.strip())

    def include_list(self) -> tuple[str, ...]:
        return tuple(e.strip() for e in self.experiments.split(",") if e.strip())

    def exclude_list(self) -> tuple[str, ...]:
        return tuple(e.strip() for e in self.exclude.split(",") if e.strip())


_INT_KEYS = {"seed", "epochs", "batch_size", "bptt_window", "embedding_size", "vocab_size"}
_FLOAT_KEYS = {"alpha", "learning_rate", "clip_norm", "holdout_fraction"}
# output locations never enter the config hash: equal hashes must mean
# byte-identical analytical outputs wherever they land
_UNHASHED_KEYS = {"output_dir"}
_PATH_KEYS = {"corpus_dir", "expected_dir", "train_corpus", "model", "surprisals",
              "analysis_configs"}


def parse_config_file(path) -> dict:
    values: dict = {}
    known = {f.name for f in fields(RunConfig)}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = stripped.partition("=")
        key, value = key.strip(), value.strip()
        if key not in known:
            raise UsageError(f"{path}:{lineno}: unknown configuration key {key!r}")
        if key in _INT_KEYS:
            values[key] = int(value)
        elif key in _FLOAT_KEYS:
            values[key] = float(value)
        else:
            values[key] = value
    return values


def build_config(args) -> RunConfig:
    values = parse_config_file(args.config) if args.config else {}
    for key in (f.name for f in fields(RunConfig)):
        override = getattr(args, key, None)
        if override is not None:
            values[key] = override
    return RunConfig(**values)


def _digest_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _input_files(config: RunConfig, keys) -> list[Path]:
    out = []
    for key in keys:
        raw = getattr(config, key)
        if not raw:
            continue
        path = Path(raw)
        if path.is_dir():
            out.extend(sorted(p for p in path.rglob("*") if p.is_file()))
        elif path.exists():
            out.append(path)
    return out


def config_hash(config: RunConfig, input_keys) -> str:
    """Hash of the analytical configuration plus every input file's digest."""
    hasher = hashlib.sha256()
    for f in sorted(f.name for f in fields(RunConfig)):
        if f in _UNHASHED_KEYS or f in _PATH_KEYS:
            continue
        hasher.update(f"{f}={getattr(config, f)}\n".encode())
    for path in _input_files(config, input_keys):
        hasher.update(f"input:{path.name}:{_digest_file(path)}\n".encode())
    return hasher.hexdigest()


def _require(config: RunConfig, key: str, why: str) -> str:
    value = getattr(config, key)
    if not value:
        raise MissingInputError(f"missing configuration key {key!r} ({why})")
    return value


def _load_train_sentences(path: Path) -> list[list[str]]:
    sentences = [line.split() for line in path.read_text(encoding="utf-8").splitlines()]
    sentences = [s for s in sentences if s]
    if not sentences:
        raise MissingInputError(f"training corpus {path} is empty")
    return sentences


def _build_model(config: RunConfig) -> LstmLanguageModel:
    return LstmLanguageModel(
        embedding_size=config.embedding_size,
        hidden_sizes=config.hidden_tuple(),
        max_vocab_size=config.vocab_size,
        epochs=config.epochs,
        learning_rate=config.learning_rate,
        batch_size=config.batch_size,
        bptt_window=config.bptt_window,
        clip_norm=config.clip_norm,
        holdout_fraction=config.holdout_fraction,
        seed=config.seed,
    )


def _write_training_log(path: Path, model: LstmLanguageModel, digest: str, seed: int):
    lines = [f"# config_hash: {digest}", f"# seed: {seed}",
             "epoch\tholdout_perplexity\ttrain_ce_nats"]
    ppl = model.training_log_.holdout_perplexities()
    train_ce = model.training_log_.train_ce
    for epoch, value in enumerate(ppl):
        ce = format(train_ce[epoch - 1], ".6g") if epoch >= 1 else "-"
        lines.append(f"{epoch}\t{value:.6g}\t{ce}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_train(config: RunConfig) -> int:
    corpus_path = Path(_require(config, "train_corpus", "path to the training text"))
    if not corpus_path.exists():
        raise MissingInputError(f"training corpus {corpus_path} does not exist")
    digest = config_hash(config, ["train_corpus"])
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    weights = out_dir / "model.n4lm"
    vocab = out_dir / "model.vocab"
    train_log = out_dir / "train_log.txt"
    try:
        sentences = _load_train_sentences(corpus_path)
        log.info("training on %d sentences (seed %d)", len(sentences), config.seed)
        model = _build_model(config)
        model.fit(sentences)
        model.save(weights, vocab, config_hash=digest)
        _write_training_log(train_log, model, digest, config.seed)
    except Exception:
        for partial in (weights, vocab, train_log):
            partial.unlink(missing_ok=True)
        raise
    ppl = model.training_log_.holdout_perplexities()
    log.info("held-out perplexity %.3f -> %.3f", ppl[0], ppl[-1])
    log.info("wrote %s, %s, %s", weights, vocab, train_log)
    return 0


def _load_model(config: RunConfig) -> LstmLanguageModel:
    model_path = Path(_require(config, "model", "path to a trained weight file"))
    if not model_path.exists():
        raise MissingInputError(f"model file {model_path} does not exist")
    return LstmLanguageModel.load(model_path)


def _analysis_configs(config: RunConfig, alpha: float):
    path = config.analysis_configs or None
    return load_experiment_configs(path, alpha=alpha)


def cmd_surprisal(config: RunConfig) -> int:
    corpus_dir = Path(_require(config, "corpus_dir", "directory of stimulus .tsv files"))
    model = _load_model(config)
    digest = config_hash(config, ["corpus_dir", "model"])
    configs = _analysis_configs(config, config.alpha)
    items = load_corpus_dir(corpus_dir)
    scored = score_corpus(
        model, items, configs,
        include=config.include_list() or None,
        exclude=config.exclude_list() or None,
    )
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = [r for s in scored for r in s.records]
    out_path = out_dir / "surprisals.csv"
    out_path.write_text(write_surprisal_csv(records, digest, config.seed), encoding="utf-8")
    for s in scored:
        per = ", ".join(f"{c}={cov.analyzed}/{cov.analyzed + cov.excluded}"
                        for c, cov in sorted(s.coverage.per_condition.items()))
        log.info("experiment %s: %d analyzed, %d excluded (%s)",
                 s.experiment_id, s.coverage.n_analyzed, s.coverage.n_excluded, per)
        if s.coverage.low_coverage:
            log.warning("experiment %s below the 100-item coverage floor", s.experiment_id)
    log.info("wrote %s", out_path)
    return 0


def _write_bundle(bundle, out_dir: Path) -> None:
    (out_dir / "report.json").write_text(bundle_to_json(bundle), encoding="utf-8")
    (out_dir / "report.txt").write_text(bundle_to_table(bundle), encoding="utf-8")
    fits_dir = out_dir / "fits"
    fits_dir.mkdir(exist_ok=True)
    for report in bundle.experiments:
        if report.derived is not None:
            (fits_dir / f"{report.experiment_id}.txt").write_text(
                format_fit_report(report.derived.fit, "surprisal"), encoding="utf-8"
            )


def cmd_analyze(config: RunConfig) -> int:
    surprisal_paths = [Path(p.strip()) for p in
                       _require(config, "surprisals", "surprisal CSV file(s)").split(",")]
    expected_dir = Path(_require(config, "expected_dir", "directory of expected patterns"))
    for path in surprisal_paths:
        if not path.exists():
            raise MissingInputError(f"surprisal file {path} does not exist")
    digest = config_hash(config, ["surprisals", "expected_dir", "analysis_configs"])
    records = []
    for path in surprisal_paths:
        records.extend(read_surprisal_csv(path.read_text(encoding="utf-8")))
    if not records:
        log.error("no surprisal records in %s", ", ".join(map(str, surprisal_paths)))
        return 1
    expected = load_expected_dir(expected_dir)
    configs = _analysis_configs(config, config.alpha)
    bundle = analyze_records(
        records, expected, configs, alpha=config.alpha,
        include=config.include_list() or None,
        exclude=config.exclude_list() or None,
        config_hash=digest, seed=config.seed,
    )
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_bundle(bundle, out_dir)
    for report in bundle.experiments:
        log.info("experiment %s: %s", report.experiment_id,
                 report.message or report.status)
    log.info("wrote %s and %s", out_dir / "report.json", out_dir / "report.txt")
    if bundle.n_evaluable == 0:
        log.error("zero experiments evaluable")
        return 1
    return 0


def cmd_pipeline(config: RunConfig, train_requested: bool) -> int:
    corpus_dir = Path(_require(config, "corpus_dir", "directory of stimulus .tsv files"))
    expected_dir = Path(_require(config, "expected_dir", "directory of expected patterns"))
    if config.model and train_requested:
        raise UsageError("pass either an existing --model or --train-corpus, not both")
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if config.model:
        log.info("stage train: skipped, loading %s", config.model)
        digest = config_hash(config, ["corpus_dir", "expected_dir", "model",
                                      "analysis_configs"])
        try:
            model = _load_model(config)
        except Exception as exc:
            raise RuntimeError(f"pipeline stage 'train/load' failed: {exc}") from exc
    else:
        digest = config_hash(config, ["corpus_dir", "expected_dir", "train_corpus",
                                      "analysis_configs"])
        try:
            corpus_path = Path(_require(
                config, "train_corpus",
                "path to training text (or pass model= to reuse weights)",
            ))
            sentences = _load_train_sentences(corpus_path)
            log.info("stage train: %d sentences (seed %d)", len(sentences), config.seed)
            model = _build_model(config)
            model.fit(sentences)
            model.save(out_dir / "model.n4lm", out_dir / "model.vocab", config_hash=digest)
            _write_training_log(out_dir / "train_log.txt", model, digest, config.seed)
        except UsageError:
            raise
        except Exception as exc:
            raise RuntimeError(f"pipeline stage 'train' failed: {exc}") from exc

    configs = _analysis_configs(config, config.alpha)
    try:
        log.info("stage surprisal: scoring %s", corpus_dir)
        bundle, scored = run_pipeline(
            model, corpus_dir, expected_dir, configs,
            alpha=config.alpha,
            include=config.include_list() or None,
            exclude=config.exclude_list() or None,
            config_hash=digest, seed=config.seed,
        )
        records = [r for s in scored for r in s.records]
        (out_dir / "surprisals.csv").write_text(
            write_surprisal_csv(records, digest, config.seed), encoding="utf-8"
        )
    except Exception as exc:
        raise RuntimeError(f"pipeline stage 'surprisal' failed: {exc}") from exc
    try:
        log.info("stage analyze: writing report bundle")
        _write_bundle(bundle, out_dir)
    except Exception as exc:
        raise RuntimeError(f"pipeline stage 'analyze' failed: {exc}") from exc
    for report in bundle.experiments:
        log.info("experiment %s: %s", report.experiment_id, report.status)
    if bundle.n_evaluable == 0:
        log.error("zero experiments evaluable")
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="n400surprisal",
        description=(
            "word-level LSTM surprisal over condition-tagged stimuli, with "
            "mixed-effects significance-pattern analysis"
        ),
    )
    parser.add_argument(
        "--version", action="version",
        version=f"n400surprisal {__version__} (weight format v{WEIGHT_FORMAT_VERSION})",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="key=value configuration file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--alpha", type=float, default=None)
        p.add_argument("--experiments", default=None,
                       help="comma-separated include filter of experiment ids")
        p.add_argument("--exclude", default=None,
                       help="comma-separated exclude filter of experiment ids")
        p.add_argument("--output-dir", dest="output_dir", default=None)
        p.add_argument("--model", default=None, help="trained weight file")
        p.add_argument("--analysis-configs", dest="analysis_configs", default=None,
                       help="JSON analysis configuration (defaults to the shipped file)")

    p_train = sub.add_parser("train", help="train the language model")
    add_common(p_train)
    p_train.add_argument("--train-corpus", dest="train_corpus", default=None,
                         help="text file, one sentence per line")

    p_surp = sub.add_parser("surprisal", help="score stimuli with a trained model")
    add_common(p_surp)
    p_surp.add_argument("--corpus-dir", dest="corpus_dir", default=None)

    p_ana = sub.add_parser("analyze", help="statistics stage over surprisal CSVs")
    add_common(p_ana)
    p_ana.add_argument("--surprisals", default=None,
                       help="comma-separated surprisal CSV file(s)")
    p_ana.add_argument("--expected-dir", dest="expected_dir", default=None)

    p_pipe = sub.add_parser("pipeline", help="train (or load), score, analyze")
    add_common(p_pipe)
    p_pipe.add_argument("--train-corpus", dest="train_corpus", default=None)
    p_pipe.add_argument("--corpus-dir", dest="corpus_dir", default=None)
    p_pipe.add_argument("--expected-dir", dest="expected_dir", default=None)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = build_config(args)
        if args.command == "train":
            return cmd_train(config)
        if args.command == "surprisal":
            return cmd_surprisal(config)
        if args.command == "analyze":
            return cmd_analyze(config)
        if args.command == "pipeline":
            return cmd_pipeline(config, train_requested=args.train_corpus is not None)
        raise UsageError(f"unknown command {args.command!r}")
    except UsageError as exc:
        parser.exit(2, f"usage error: {exc}\n")
    except Exception as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
