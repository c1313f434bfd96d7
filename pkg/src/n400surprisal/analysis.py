"""Per-experiment orchestration: score stimuli, derive the significance
pattern among conditions, and classify it against the expected pattern.

The derived pattern follows the analysis methodology end to end: backward
model selection by ML likelihood-ratio tests over the configured factors,
then pairwise Satterthwaite t contrasts on a REML refit of the selected
model.  Factor-level pairs of factors that were dropped during selection are
reported non-significant by construction (their t test, computed on the
selected model plus that factor, is attached for transparency).  Forced cell
contrasts are computed on the full candidate model regardless of selection.
"""

from __future__ import annotations

import io
import csv
import math
import warnings
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Mapping, Sequence

from n400surprisal.corpus import Design, ExpectedPattern, ExperimentSpec, single_factor_design
from n400surprisal.lm.estimator import LstmLanguageModel
from n400surprisal.lm.vocab import tokenize
from n400surprisal.stats.data import Dataset, ModelFormula
from n400surprisal.stats.inference import (
    TestResult,
    backward_model_selection,
    cell_contrast,
    pairwise_contrast,
)
from n400surprisal.stats.lmm import REML, FittedLmm, fit_lmm

OOV_TARGET = "oov_target"
TOKENIZATION_FAILURE = "tokenization_failure"
NON_FINITE_SURPRISAL = "non_finite_surprisal"
_REASONS = (OOV_TARGET, TOKENIZATION_FAILURE, NON_FINITE_SURPRISAL)

COVERAGE_FLOOR = 100

MATCH = "MATCH"
MISMATCH = "MISMATCH"
UNEVALUABLE = "UNEVALUABLE"
FULL_MATCH = "FULL_MATCH"
PARTIAL = "PARTIAL"

SURPRISAL_CSV_HEADER = ("experiment", "item", "condition", "target",
                        "surprisal", "excluded", "reason")


class CoverageWarning(UserWarning):
    pass


class InsufficientDataError(ValueError):
    pass


class SurprisalFormatError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class SurprisalRecord:
    """One target word's surprisal (bits) or its exclusion reason."""

    experiment_id: str
    item_id: str
    condition: str
    target: str
    surprisal: float | None
    excluded: bool = False
    reason: str = ""

    def __post_init__(self):
        if self.excluded:
            if self.surprisal is not None:
                raise ValueError("excluded records carry no surprisal value")
            if self.reason not in _REASONS:
                raise ValueError(f"unknown exclusion reason {self.reason!r}")
        else:
            if self.surprisal is None:
                raise ValueError("non-excluded records need a surprisal value")
            if not self.surprisal >= 0.0:
                raise ValueError(f"surprisal must be non-negative, got {self.surprisal}")
            if self.reason:
                raise ValueError("reason is only meaningful for excluded records")


@dataclass(frozen=True)
class ConditionCoverage:
    analyzed: int
    excluded: int


@dataclass(frozen=True)
class CoverageSummary:
    per_condition: Mapping[str, ConditionCoverage]
    n_analyzed: int
    n_excluded: int

    @property
    def low_coverage(self) -> bool:
        return self.n_analyzed < COVERAGE_FLOOR


@dataclass(frozen=True)
class ScoredExperiment:
    experiment_id: str
    records: tuple[SurprisalRecord, ...]
    coverage: CoverageSummary


def summarize_coverage(records: Iterable[SurprisalRecord]) -> CoverageSummary:
    per: dict[str, list[int]] = {}
    for record in records:
        slot = per.setdefault(record.condition, [0, 0])
        slot[1 if record.excluded else 0] += 1
    per_condition = {
        cond: ConditionCoverage(analyzed=a, excluded=e) for cond, (a, e) in per.items()
    }
    return CoverageSummary(
        per_condition=per_condition,
        n_analyzed=sum(c.analyzed for c in per_condition.values()),
        n_excluded=sum(c.excluded for c in per_condition.values()),
    )


def compute_surprisals(model: LstmLanguageModel, spec: ExperimentSpec) -> ScoredExperiment:
    """Score every stimulus item; per-item failures become flagged exclusions.

    Out-of-vocabulary targets are excluded (and counted); out-of-vocabulary
    context words are fed as the unknown token.  Warns when fewer than 100
    items end up analyzed.
    """
    records = []
    for item in spec.items:
        _, oov = tokenize(item.tokens, model.vocab_)
        if item.target_index in oov:
            records.append(SurprisalRecord(
                spec.experiment_id, item.item_id, item.condition, item.target,
                surprisal=None, excluded=True, reason=OOV_TARGET,
            ))
            continue
        try:
            value = model.surprisal(item.tokens, item.target_index)
        except Exception:
            records.append(SurprisalRecord(
                spec.experiment_id, item.item_id, item.condition, item.target,
                surprisal=None, excluded=True, reason=TOKENIZATION_FAILURE,
            ))
            continue
        if not math.isfinite(value):
            records.append(SurprisalRecord(
                spec.experiment_id, item.item_id, item.condition, item.target,
                surprisal=None, excluded=True, reason=NON_FINITE_SURPRISAL,
            ))
            continue
        records.append(SurprisalRecord(
            spec.experiment_id, item.item_id, item.condition, item.target,
            surprisal=value,
        ))
    coverage = summarize_coverage(records)
    if coverage.low_coverage:
        warnings.warn(
            f"experiment {spec.experiment_id!r}: only {coverage.n_analyzed} items "
            f"analyzed (below the {COVERAGE_FLOOR}-item coverage floor)",
            CoverageWarning,
            stacklevel=2,
        )
    return ScoredExperiment(
        experiment_id=spec.experiment_id, records=tuple(records), coverage=coverage
    )


def write_surprisal_csv(records: Iterable[SurprisalRecord], config_hash: str = "",
                        seed: int | None = None) -> str:
    """Serialize records to the documented CSV format (also an input format,
    so externally computed surprisals can enter the statistics stage)."""
    buf = io.StringIO()
    if config_hash:
        buf.write(f"# config_hash: {config_hash}\n")
    if seed is not None:
        buf.write(f"# seed: {seed}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SURPRISAL_CSV_HEADER)
    for record in records:
        writer.writerow([
            record.experiment_id,
            record.item_id,
            record.condition,
            record.target,
            # repr: shortest decimal that round-trips the float64 exactly
            "" if record.surprisal is None else repr(record.surprisal),
            "true" if record.excluded else "false",
            record.reason,
        ])
    return buf.getvalue()


def read_surprisal_csv(text: str) -> list[SurprisalRecord]:
    records = []
    lines = text.splitlines()
    header_seen = False
    for lineno, raw in enumerate(lines, start=1):
        if not raw.strip() or raw.lstrip().startswith("#"):
            continue
        row = next(csv.reader([raw]))
        if not header_seen:
            if tuple(cell.strip() for cell in row) != SURPRISAL_CSV_HEADER:
                raise SurprisalFormatError(
                    f"expected header {','.join(SURPRISAL_CSV_HEADER)!r}", lineno
                )
            header_seen = True
            continue
        if len(row) != len(SURPRISAL_CSV_HEADER):
            raise SurprisalFormatError(
                f"expected {len(SURPRISAL_CSV_HEADER)} fields, got {len(row)}", lineno
            )
        experiment, item, condition, target, value, excluded, reason = (c.strip() for c in row)
        if excluded not in ("true", "false"):
            raise SurprisalFormatError(f"excluded must be 'true' or 'false', got {excluded!r}", lineno)
        is_excluded = excluded == "true"
        try:
            surprisal = None if is_excluded else float(value)
        except ValueError:
            raise SurprisalFormatError(f"bad surprisal value {value!r}", lineno) from None
        try:
            records.append(SurprisalRecord(
                experiment_id=experiment, item_id=item, condition=condition,
                target=target, surprisal=surprisal, excluded=is_excluded, reason=reason,
            ))
        except ValueError as exc:
            raise SurprisalFormatError(str(exc), lineno) from None
    if not header_seen:
        raise SurprisalFormatError("file has no header row")
    return records


@dataclass(frozen=True)
class ForcedContrast:
    """A cell-level t test run regardless of model selection."""

    condition_a: str
    condition_b: str


@dataclass(frozen=True)
class AnalysisConfig:
    design: Design | None = None
    interactions: tuple[tuple[str, str], ...] = ()
    forced_contrasts: tuple[ForcedContrast, ...] = ()
    alpha: float = 0.05

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")


@dataclass(frozen=True)
class PairResult:
    """Derived relation between two labels (factor levels or cells)."""

    a: str
    b: str
    estimate: float            # fitted mean(a) - fitted mean(b)
    statistic: float
    df: float
    p: float
    significant: bool
    source: str                # "selected" | "unselected" | "forced"

    @property
    def lower(self) -> str | None:
        if not self.significant:
            return None
        return self.a if self.estimate < 0 else self.b


@dataclass(frozen=True)
class PredictorResult:
    label: str
    retained: bool
    lrt: TestResult


@dataclass(frozen=True)
class DerivedPattern:
    experiment_id: str
    pairs: tuple[PairResult, ...]
    predictors: tuple[PredictorResult, ...]
    alpha: float
    n_analyzed: int
    n_excluded: int
    analyzed_labels: frozenset[str]
    known_labels: frozenset[str]
    selected_formula: str
    fit: FittedLmm = field(repr=False, compare=False)

    def relation_between(self, a: str, b: str) -> tuple[PairResult, float] | None:
        """Pair for (a, b) with the estimate oriented as mean(a) - mean(b)."""
        for pair in self.pairs:
            if (pair.a, pair.b) == (a, b):
                return pair, pair.estimate
            if (pair.a, pair.b) == (b, a):
                return pair, -pair.estimate
        return None


def _build_dataset(records: Sequence[SurprisalRecord], design: Design) -> Dataset:
    fixed: dict[str, list[str]] = {f.name: [] for f in design.factors}
    items: list[str] = []
    response = []
    for record in records:
        parts = design.split_condition(record.condition)
        for name, level in parts.items():
            fixed[name].append(level)
        items.append(record.item_id)
        response.append(record.surprisal)
    # registries keep only levels that actually occur, in design order
    observed = {}
    for factor in design.factors:
        present = set(fixed[factor.name])
        observed[factor.name] = tuple(lvl for lvl in factor.levels if lvl in present)
    return Dataset(
        response=response,
        fixed=fixed,
        groups={"item": items},
        fixed_levels=observed,
        group_levels=None,
    )


def derive_pattern(
    records: Sequence[SurprisalRecord],
    config: AnalysisConfig | None = None,
    experiment_id: str | None = None,
) -> DerivedPattern:
    """Backward selection plus pairwise contrasts over analyzed records."""
    config = config or AnalysisConfig()
    records = tuple(records)
    if not records:
        raise InsufficientDataError("no surprisal records")
    experiment_id = experiment_id or records[0].experiment_id
    analyzed = [r for r in records if not r.excluded and r.experiment_id == experiment_id]
    excluded = [r for r in records if r.excluded and r.experiment_id == experiment_id]

    counts: dict[str, int] = {}
    for record in analyzed:
        counts[record.condition] = counts.get(record.condition, 0) + 1
    thin = {c: n for c, n in counts.items() if n < 2}
    if len(counts) < 2 or thin:
        raise InsufficientDataError(
            f"need at least 2 conditions with 2 analyzed items each; "
            f"analyzed counts: {counts or 'none'}"
        )

    design = config.design
    if design is None:
        seen: list[str] = []
        for record in analyzed:
            if record.condition not in seen:
                seen.append(record.condition)
        design = single_factor_design(seen)

    dataset = _build_dataset(analyzed, design)
    factor_names = [f.name for f in design.factors]
    candidates = [(name,) for name in factor_names]
    candidates += [tuple(i) for i in config.interactions]
    selection = backward_model_selection(
        dataset, candidates, random_intercepts=("item",), alpha=config.alpha
    )

    predictors = tuple(
        PredictorResult(
            label=label,
            retained=tuple(label.split(":")) in selection.selected.fixed_terms,
            lrt=selection.tests[label],
        )
        for label in (":".join(t) for t in candidates)
    )

    reml_cache: dict[tuple, FittedLmm] = {}

    def reml_fit(formula: ModelFormula) -> FittedLmm:
        key = formula.fixed_terms
        if key not in reml_cache:
            reml_cache[key] = fit_lmm(dataset, formula, criterion=REML)
        return reml_cache[key]

    selected_reml = reml_fit(selection.selected)

    pairs: list[PairResult] = []
    for factor in design.factors:
        levels = dataset.fixed_levels[factor.name]
        if len(levels) < 2:
            continue
        retained = (factor.name,) in selection.selected.fixed_terms
        fit = selected_reml if retained else reml_fit(selection.selected.with_term((factor.name,)))
        for a, b in combinations(levels, 2):
            res = pairwise_contrast(fit, a, b, factor=factor.name)
            pairs.append(PairResult(
                a=a, b=b, estimate=res.estimate, statistic=res.statistic,
                df=res.df1, p=res.p,
                significant=retained and res.p < config.alpha,
                source="selected" if retained else "unselected",
            ))

    if config.forced_contrasts:
        full_formula = ModelFormula(
            fixed_terms=tuple(candidates), random_intercepts=("item",)
        )
        full_fit = reml_fit(full_formula)
        for forced in config.forced_contrasts:
            cell_a = design.split_condition(forced.condition_a)
            cell_b = design.split_condition(forced.condition_b)
            res = cell_contrast(full_fit, cell_a, cell_b)
            pairs.append(PairResult(
                a=forced.condition_a, b=forced.condition_b,
                estimate=res.estimate, statistic=res.statistic,
                df=res.df1, p=res.p,
                significant=res.p < config.alpha,
                source="forced",
            ))

    analyzed_labels = set(counts)
    known_labels = set(r.condition for r in records if r.experiment_id == experiment_id)
    if len(design.factors) > 1:
        for record in analyzed:
            analyzed_labels.update(design.split_condition(record.condition).values())
        for label in known_labels.copy():
            known_labels.update(design.split_condition(label).values())

    return DerivedPattern(
        experiment_id=experiment_id,
        pairs=tuple(pairs),
        predictors=predictors,
        alpha=config.alpha,
        n_analyzed=len(analyzed),
        n_excluded=len(excluded),
        analyzed_labels=frozenset(analyzed_labels),
        known_labels=frozenset(known_labels),
        selected_formula=selection.selected.describe("surprisal"),
        fit=selected_reml,
    )


@dataclass(frozen=True)
class RelationOutcome:
    expected: str
    observed: str
    verdict: str               # MATCH | MISMATCH | UNEVALUABLE


@dataclass(frozen=True)
class PatternComparison:
    experiment_id: str
    outcomes: tuple[RelationOutcome, ...]
    classification: str        # FULL_MATCH | PARTIAL | MISMATCH | UNEVALUABLE
    n_items_analyzed: int
    n_excluded: int
    pattern_label: str = ""


def classify_outcomes(verdicts: Sequence[str]) -> str:
    evaluable = [v for v in verdicts if v != UNEVALUABLE]
    if not evaluable:
        return UNEVALUABLE
    if all(v == MATCH for v in evaluable):
        return FULL_MATCH
    if not any(v == MATCH for v in evaluable):
        return MISMATCH
    return PARTIAL


def compare_patterns(
    derived: DerivedPattern, expected: ExpectedPattern, pattern_label: str = ""
) -> PatternComparison:
    """Check each expected amplitude relation against the derived pattern.

    LOWER(a, b) matches a significant difference with ``a`` fitted lower;
    NO_DIFFERENCE(a, b) matches a non-significant pair.  Relations touching a
    condition with no analyzed items are UNEVALUABLE and excluded from the
    overall classification denominator.
    """
    if expected.experiment_id != derived.experiment_id:
        raise ValueError(
            f"pattern is for {expected.experiment_id!r}, derived is {derived.experiment_id!r}"
        )
    outcomes = []
    for relation in expected.relations:
        a, b = relation.condition_a, relation.condition_b
        for label in (a, b):
            if label not in derived.known_labels and label not in derived.analyzed_labels:
                raise ValueError(
                    f"expected pattern references unknown condition {label!r}"
                )
        found = derived.relation_between(a, b)
        if found is None:
            missing = [x for x in (a, b) if x not in derived.analyzed_labels]
            if missing:
                outcomes.append(RelationOutcome(
                    expected=str(relation),
                    observed=f"not evaluable: no analyzed items for {missing}",
                    verdict=UNEVALUABLE,
                ))
                continue
            raise ValueError(
                f"no derived pair for ({a}, {b}); analysis config does not produce it"
            )
        pair, estimate_ab = found
        if pair.significant:
            direction = a if estimate_ab < 0 else b
            observed = (f"{direction} lower (diff {estimate_ab:+.4g} bits, "
                        f"p={pair.p:.4g})")
        else:
            observed = f"no significant difference (p={pair.p:.4g})"
        if relation.relation == "LOWER":
            verdict = MATCH if pair.significant and estimate_ab < 0 else MISMATCH
        else:
            verdict = MATCH if not pair.significant else MISMATCH
        outcomes.append(RelationOutcome(expected=str(relation), observed=observed,
                                        verdict=verdict))
    return PatternComparison(
        experiment_id=derived.experiment_id,
        outcomes=tuple(outcomes),
        classification=classify_outcomes([o.verdict for o in outcomes]),
        n_items_analyzed=derived.n_analyzed,
        n_excluded=derived.n_excluded,
        pattern_label=pattern_label,
    )
