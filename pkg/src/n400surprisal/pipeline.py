"""Batch orchestration across experiments plus report rendering.

The report bundle is deterministic: floats are rounded to six significant
digits before formatting, keys are emitted in a fixed order, and no
timestamps or absolute paths appear, so a rerun with the same configuration
hash is byte-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from n400surprisal import __version__
from n400surprisal.analysis import (
    UNEVALUABLE,
    AnalysisConfig,
    CoverageSummary,
    DerivedPattern,
    ForcedContrast,
    PatternComparison,
    ScoredExperiment,
    SurprisalRecord,
    compare_patterns,
    compute_surprisals,
    derive_pattern,
    summarize_coverage,
)
from n400surprisal.corpus import (
    ExpectedPattern,
    load_design,
    parse_expected_pattern,
    parse_stimulus_file,
    validate_experiment,
)
from n400surprisal.lm.estimator import LstmLanguageModel
from n400surprisal.stats.report import format_fit_summary

STATUS_OK = "ok"
STATUS_UNEVALUABLE = "unevaluable"
STATUS_ERROR = "error"


def shipped_data_dir() -> Path:
    return Path(__file__).parent / "data"


def load_experiment_configs(path=None, alpha: float = 0.05) -> dict[str, AnalysisConfig]:
    """Per-experiment analysis configurations from a JSON mapping.

    Defaults to the shipped file.  Experiments without an entry fall back to
    a single implicit condition factor.
    """
    if path is None:
        path = shipped_data_dir() / "experiment_configs.json"
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    configs = {}
    for experiment_id, spec in raw.items():
        design = load_design(spec) if "factors" in spec else None
        interactions = tuple(tuple(i) for i in spec.get("interactions", ()))
        forced = tuple(
            ForcedContrast(condition_a=f["a"], condition_b=f["b"])
            for f in spec.get("forced_contrasts", ())
        )
        configs[experiment_id] = AnalysisConfig(
            design=design, interactions=interactions, forced_contrasts=forced, alpha=alpha
        )
    return configs


def load_corpus_dir(corpus_dir) -> dict[str, list]:
    """Parse every .tsv stimulus file; experiments keep first-appearance order
    over the sorted file list."""
    corpus_dir = Path(corpus_dir)
    files = sorted(corpus_dir.glob("*.tsv"))
    if not files:
        raise FileNotFoundError(f"no .tsv stimulus files in {corpus_dir}")
    by_experiment: dict[str, list] = {}
    for path in files:
        for item in parse_stimulus_file(path.read_text(encoding="utf-8")):
            by_experiment.setdefault(item.experiment_id, []).append(item)
    return by_experiment


def load_expected_dir(expected_dir) -> dict[str, list[tuple[str, ExpectedPattern]]]:
    """Parse every .txt pattern file; multiple files may target one
    experiment (alternative readings ship as separate files)."""
    expected_dir = Path(expected_dir)
    out: dict[str, list[tuple[str, ExpectedPattern]]] = {}
    for path in sorted(expected_dir.glob("*.txt")):
        pattern = parse_expected_pattern(path.read_text(encoding="utf-8"))
        out.setdefault(pattern.experiment_id, []).append((path.stem, pattern))
    return out


@dataclass(frozen=True)
class ExperimentReport:
    experiment_id: str
    status: str
    message: str = ""
    coverage: CoverageSummary | None = None
    derived: DerivedPattern | None = None
    comparisons: tuple[PatternComparison, ...] = ()
    fit_summary: dict | None = None


@dataclass(frozen=True)
class ReportBundle:
    config_hash: str
    seed: int
    alpha: float
    experiments: tuple[ExperimentReport, ...]
    toolkit_version: str = __version__

    @property
    def n_evaluable(self) -> int:
        return sum(r.status == STATUS_OK for r in self.experiments)


def _filter_experiments(order: Sequence[str], include, exclude) -> list[str]:
    selected = list(order)
    if include:
        wanted = set(include)
        unknown = wanted - set(order)
        if unknown:
            raise ValueError(f"unknown experiment id(s) in filter: {sorted(unknown)}")
        selected = [e for e in selected if e in wanted]
    if exclude:
        selected = [e for e in selected if e not in set(exclude)]
    return selected


def analyze_experiment(
    experiment_id: str,
    records: Sequence[SurprisalRecord],
    expected: Sequence[tuple[str, ExpectedPattern]],
    config: AnalysisConfig,
) -> ExperimentReport:
    coverage = summarize_coverage(records)
    try:
        derived = derive_pattern(records, config, experiment_id=experiment_id)
    except Exception as exc:
        return ExperimentReport(
            experiment_id=experiment_id, status=STATUS_ERROR,
            message=f"{type(exc).__name__}: {exc}", coverage=coverage,
        )
    if not expected:
        return ExperimentReport(
            experiment_id=experiment_id, status=STATUS_UNEVALUABLE,
            message="no expected-pattern file", coverage=coverage, derived=derived,
            fit_summary=format_fit_summary(derived.fit, "surprisal"),
        )
    comparisons = []
    try:
        for label, pattern in expected:
            comparisons.append(compare_patterns(derived, pattern, pattern_label=label))
    except Exception as exc:
        return ExperimentReport(
            experiment_id=experiment_id, status=STATUS_ERROR,
            message=f"{type(exc).__name__}: {exc}", coverage=coverage, derived=derived,
        )
    return ExperimentReport(
        experiment_id=experiment_id, status=STATUS_OK, coverage=coverage,
        derived=derived, comparisons=tuple(comparisons),
        fit_summary=format_fit_summary(derived.fit, "surprisal"),
    )


def analyze_records(
    records: Sequence[SurprisalRecord],
    expected_by_experiment: Mapping[str, Sequence[tuple[str, ExpectedPattern]]],
    configs: Mapping[str, AnalysisConfig] | None = None,
    alpha: float = 0.05,
    include: Sequence[str] | None = None,
    exclude: Sequence[str] | None = None,
    config_hash: str = "",
    seed: int = 0,
) -> ReportBundle:
    """Statistics stage over long-format surprisal records (from this
    toolkit's scorer or any external model via the CSV format)."""
    configs = configs or {}
    order: list[str] = []
    by_experiment: dict[str, list[SurprisalRecord]] = {}
    for record in records:
        if record.experiment_id not in by_experiment:
            order.append(record.experiment_id)
            by_experiment[record.experiment_id] = []
        by_experiment[record.experiment_id].append(record)
    selected = _filter_experiments(order, include, exclude)
    reports = []
    for experiment_id in selected:
        config = configs.get(experiment_id) or AnalysisConfig(alpha=alpha)
        if config.alpha != alpha:
            config = AnalysisConfig(
                design=config.design, interactions=config.interactions,
                forced_contrasts=config.forced_contrasts, alpha=alpha,
            )
        reports.append(analyze_experiment(
            experiment_id, by_experiment[experiment_id],
            tuple(expected_by_experiment.get(experiment_id, ())), config,
        ))
    return ReportBundle(
        config_hash=config_hash, seed=seed, alpha=alpha, experiments=tuple(reports)
    )


def score_corpus(
    model: LstmLanguageModel,
    items_by_experiment: Mapping[str, Sequence],
    configs: Mapping[str, AnalysisConfig] | None = None,
    include: Sequence[str] | None = None,
    exclude: Sequence[str] | None = None,
) -> list[ScoredExperiment]:
    """Validate and score each experiment's stimuli with the model."""
    configs = configs or {}
    selected = _filter_experiments(list(items_by_experiment), include, exclude)
    scored = []
    for experiment_id in selected:
        config = configs.get(experiment_id)
        design = config.design if config else None
        spec = validate_experiment(items_by_experiment[experiment_id], design)
        scored.append(compute_surprisals(model, spec))
    return scored


def run_pipeline(
    model: LstmLanguageModel,
    corpus_dir,
    expected_dir,
    configs: Mapping[str, AnalysisConfig] | None = None,
    alpha: float = 0.05,
    include: Sequence[str] | None = None,
    exclude: Sequence[str] | None = None,
    config_hash: str = "",
    seed: int = 0,
) -> tuple[ReportBundle, list[ScoredExperiment]]:
    """Score every experiment in a corpus directory and classify each against
    its expected pattern(s).  One failing experiment does not abort others."""
    items_by_experiment = load_corpus_dir(corpus_dir)
    expected = load_expected_dir(expected_dir)
    configs = configs or {}
    selected = _filter_experiments(list(items_by_experiment), include, exclude)
    reports = []
    scored_all = []
    for experiment_id in selected:
        config = configs.get(experiment_id) or AnalysisConfig(alpha=alpha)
        if config.alpha != alpha:
            config = AnalysisConfig(
                design=config.design, interactions=config.interactions,
                forced_contrasts=config.forced_contrasts, alpha=alpha,
            )
        try:
            spec = validate_experiment(items_by_experiment[experiment_id],
                                       config.design)
            scored = compute_surprisals(model, spec)
        except Exception as exc:
            reports.append(ExperimentReport(
                experiment_id=experiment_id, status=STATUS_ERROR,
                message=f"{type(exc).__name__}: {exc}",
            ))
            continue
        scored_all.append(scored)
        reports.append(analyze_experiment(
            experiment_id, scored.records,
            tuple(expected.get(experiment_id, ())), config,
        ))
    bundle = ReportBundle(
        config_hash=config_hash, seed=seed, alpha=alpha, experiments=tuple(reports)
    )
    return bundle, scored_all


def _round6(value: float) -> float:
    return float(f"{value:.6g}")


def bundle_to_json(bundle: ReportBundle) -> str:
    experiments = []
    for report in bundle.experiments:
        entry: dict = {
            "experiment_id": report.experiment_id,
            "status": report.status,
        }
        if report.message:
            entry["message"] = report.message
        if report.coverage is not None:
            entry["n_analyzed"] = report.coverage.n_analyzed
            entry["n_excluded"] = report.coverage.n_excluded
            entry["low_coverage"] = report.coverage.low_coverage
            entry["coverage"] = {
                cond: {"analyzed": c.analyzed, "excluded": c.excluded}
                for cond, c in sorted(report.coverage.per_condition.items())
            }
        if report.derived is not None:
            derived = report.derived
            entry["selected_formula"] = derived.selected_formula
            entry["predictors"] = [
                {
                    "term": p.label,
                    "retained": p.retained,
                    "lrt_statistic": _round6(p.lrt.statistic),
                    "df": _round6(p.lrt.df1),
                    "p": _round6(p.lrt.p),
                }
                for p in derived.predictors
            ]
            entry["pairs"] = [
                {
                    "a": pair.a,
                    "b": pair.b,
                    "estimate": _round6(pair.estimate),
                    "t": _round6(pair.statistic),
                    "df": _round6(pair.df),
                    "p": _round6(pair.p),
                    "significant": pair.significant,
                    "source": pair.source,
                }
                for pair in derived.pairs
            ]
        if report.comparisons:
            entry["comparisons"] = [
                {
                    "pattern_label": comp.pattern_label,
                    "classification": comp.classification,
                    "relations": [
                        {
                            "expected": o.expected,
                            "observed": o.observed,
                            "verdict": o.verdict,
                        }
                        for o in comp.outcomes
                    ],
                }
                for comp in report.comparisons
            ]
        if report.fit_summary is not None:
            entry["fit"] = report.fit_summary
        experiments.append(entry)
    payload = {
        "toolkit_version": bundle.toolkit_version,
        "config_hash": bundle.config_hash,
        "seed": bundle.seed,
        "alpha": bundle.alpha,
        "experiments": experiments,
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def bundle_to_table(bundle: ReportBundle) -> str:
    """Human-readable summary, one row per experiment/pattern comparison."""
    lines = [
        f"# toolkit {bundle.toolkit_version}  seed {bundle.seed}  alpha {bundle.alpha}",
        f"# config_hash {bundle.config_hash}",
        "",
        f"{'experiment':<28} {'pattern':<14} {'items':>5} {'excl':>4}  {'classification':<12} relations",
    ]
    for report in bundle.experiments:
        items = report.coverage.n_analyzed if report.coverage else 0
        excl = report.coverage.n_excluded if report.coverage else 0
        if report.status == STATUS_ERROR:
            lines.append(
                f"{report.experiment_id:<28} {'-':<14} {items:>5} {excl:>4}  "
                f"{'ERROR':<12} {report.message}"
            )
            continue
        if report.status == STATUS_UNEVALUABLE or not report.comparisons:
            lines.append(
                f"{report.experiment_id:<28} {'-':<14} {items:>5} {excl:>4}  "
                f"{UNEVALUABLE:<12} {report.message or 'no expected pattern'}"
            )
            continue
        for comp in report.comparisons:
            summary = "; ".join(
                f"{o.expected} -> {o.verdict}" for o in comp.outcomes
            )
            lines.append(
                f"{report.experiment_id:<28} {comp.pattern_label:<14} {items:>5} {excl:>4}  "
                f"{comp.classification:<12} {summary}"
            )
    return "\n".join(lines) + "\n"
