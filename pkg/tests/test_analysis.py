"""Surprisal records, pattern derivation, and pattern comparison."""

import itertools

import numpy as np
import pytest

from n400surprisal.analysis import (
    FULL_MATCH,
    MATCH,
    MISMATCH,
    PARTIAL,
    UNEVALUABLE,
    AnalysisConfig,
    CoverageWarning,
    ForcedContrast,
    InsufficientDataError,
    SurprisalFormatError,
    SurprisalRecord,
    classify_outcomes,
    compare_patterns,
    compute_surprisals,
    derive_pattern,
    read_surprisal_csv,
    summarize_coverage,
    write_surprisal_csv,
)
from n400surprisal.corpus import (
    Design,
    DesignFactor,
    ExpectedPattern,
    ExperimentSpec,
    PatternRelation,
    parse_stimulus_file,
    single_factor_design,
    validate_experiment,
)
from n400surprisal.lm.estimator import LstmLanguageModel


def record(cond, item, value, experiment="exp", excluded=False, reason=""):
    return SurprisalRecord(
        experiment_id=experiment, item_id=item, condition=cond,
        target="w", surprisal=None if excluded else value,
        excluded=excluded, reason=reason,
    )


def gaussian_records(deltas, n_items=30, sigma_item=1.0, sigma_resid=1.0, seed=0,
                     experiment="exp"):
    rng = np.random.default_rng(seed)
    item_effects = rng.normal(0, sigma_item, n_items)
    out = []
    for i in range(n_items):
        for cond, delta in deltas.items():
            value = 10.0 + delta + item_effects[i] + rng.normal(0, sigma_resid)
            out.append(record(cond, f"it{i:03d}", value, experiment))
    return out


class TestSurprisalRecord:
    def test_invariants(self):
        with pytest.raises(ValueError, match="no surprisal"):
            SurprisalRecord("e", "i", "c", "w", surprisal=1.0, excluded=True, reason="oov_target")
        with pytest.raises(ValueError, match="need a surprisal"):
            SurprisalRecord("e", "i", "c", "w", surprisal=None)
        with pytest.raises(ValueError, match="non-negative"):
            SurprisalRecord("e", "i", "c", "w", surprisal=-0.5)
        with pytest.raises(ValueError, match="unknown exclusion reason"):
            SurprisalRecord("e", "i", "c", "w", surprisal=None, excluded=True, reason="meh")


class TestCsvRoundTrip:
    def test_round_trip(self):
        records = [
            record("typical", "f00", 1.2345678901),
            record("atypical", "f00", None, excluded=True, reason="oov_target"),
        ]
        text = write_surprisal_csv(records, config_hash="c0ffee", seed=9)
        assert "# config_hash: c0ffee" in text
        assert "# seed: 9" in text
        assert read_surprisal_csv(text) == records

    def test_external_csv_without_comments(self):
        text = ("experiment,item,condition,target,surprisal,excluded,reason\n"
                "kutas1993,12,bc,eat,4.25,false,\n"
                "kutas1993,12,related,chew,9.5,false,\n")
        records = read_surprisal_csv(text)
        assert len(records) == 2
        assert records[0].surprisal == 4.25

    def test_header_required(self):
        with pytest.raises(SurprisalFormatError, match="header"):
            read_surprisal_csv("a,b,c\n")

    def test_bad_excluded_flag(self):
        text = ("experiment,item,condition,target,surprisal,excluded,reason\n"
                "e,i,c,w,1.0,maybe,\n")
        with pytest.raises(SurprisalFormatError, match="line 2"):
            read_surprisal_csv(text)

    def test_bad_value(self):
        text = ("experiment,item,condition,target,surprisal,excluded,reason\n"
                "e,i,c,w,abc,false,\n")
        with pytest.raises(SurprisalFormatError, match="bad surprisal"):
            read_surprisal_csv(text)


@pytest.fixture(scope="module")
def tiny_model():
    corpus = [["the", "boat", "sank", "today"],
              ["the", "boat", "floated", "today"]] * 30
    model = LstmLanguageModel(embedding_size=8, hidden_sizes=(8,), epochs=3,
                              max_vocab_size=50, seed=5)
    return model.fit(corpus)


class TestComputeSurprisals:
    def test_in_vocab_target_scored(self, tiny_model):
        items = parse_stimulus_file(
            "experiment\titem\tcondition\tsentence\n"
            "exp\t1\tc1\tthe boat *sank* today\n"
            "exp\t1\tc2\tthe boat *floated* today\n"
        )
        spec = validate_experiment(items)
        with pytest.warns(CoverageWarning):
            scored = compute_surprisals(tiny_model, spec)
        assert all(not r.excluded for r in scored.records)
        assert all(r.surprisal >= 0 for r in scored.records)
        assert scored.coverage.n_analyzed == 2

    def test_oov_target_excluded(self, tiny_model):
        items = parse_stimulus_file(
            "experiment\titem\tcondition\tsentence\n"
            "exp\t1\tc1\tthe boat *sank* today\n"
            "exp\t2\tc1\tthe boat *zeppelin* today\n"
        )
        spec = validate_experiment(items)
        with pytest.warns(CoverageWarning):
            scored = compute_surprisals(tiny_model, spec)
        excluded = [r for r in scored.records if r.excluded]
        assert len(excluded) == 1
        assert excluded[0].reason == "oov_target"
        assert excluded[0].target == "zeppelin"
        assert scored.coverage.per_condition["c1"].excluded == 1

    def test_empty_spec_warns_and_returns_empty(self, tiny_model):
        spec = ExperimentSpec(
            experiment_id="empty", condition_set=frozenset(), items=(),
            design=single_factor_design(["x"]), condition_counts=(),
        )
        with pytest.warns(CoverageWarning, match="0 items"):
            scored = compute_surprisals(tiny_model, spec)
        assert scored.records == ()

    def test_exclusions_do_not_leak_into_other_items(self, tiny_model):
        header = "experiment\titem\tcondition\tsentence\n"
        base = "exp\t1\tc1\tthe boat *sank* today\n"
        with_oov = base + "exp\t2\tc1\tthe boat *zeppelin* today\n"
        with pytest.warns(CoverageWarning):
            alone = compute_surprisals(
                tiny_model, validate_experiment(parse_stimulus_file(header + base)))
            mixed = compute_surprisals(
                tiny_model, validate_experiment(parse_stimulus_file(header + with_oov)))
        assert alone.records[0].surprisal == mixed.records[0].surprisal


class TestDerivePattern:
    def test_two_bit_difference_detected(self):
        records = gaussian_records({"a": -2.0, "b": 0.0}, n_items=40, seed=3)
        derived = derive_pattern(records)
        pair, estimate = derived.relation_between("a", "b")
        assert pair.significant
        assert estimate < 0
        assert pair.lower == "a"
        assert derived.predictors[0].retained

    def test_equal_conditions_dropped_and_no_difference(self):
        records = gaussian_records({"a": 0.0, "b": 0.0, "c": 0.0},
                                   n_items=30, seed=12)
        derived = derive_pattern(records)
        if not derived.predictors[0].retained:  # ~95% of seeds
            assert all(not p.significant for p in derived.pairs)
            assert len(derived.pairs) == 3

    def test_label_permutation_calibration(self):
        rng = np.random.default_rng(99)
        false_positive = 0
        n_reps = 100
        for rep in range(n_reps):
            base = gaussian_records({"a": -2.0, "b": 0.0}, n_items=24, seed=rep)
            # permute condition labels within item: destroys the true effect
            flipped = []
            for i in range(0, len(base), 2):
                pair = base[i:i + 2]
                if rng.random() < 0.5:
                    pair = [
                        record(pair[1].condition, pair[0].item_id, pair[0].surprisal),
                        record(pair[0].condition, pair[1].item_id, pair[1].surprisal),
                    ]
                flipped.extend(pair)
            derived = derive_pattern(flipped)
            false_positive += any(p.significant for p in derived.pairs)
        assert false_positive <= 10  # >= 90% of replicates report no significant pair

    def test_insufficient_conditions(self):
        records = gaussian_records({"only": 0.0}, n_items=10)
        with pytest.raises(InsufficientDataError):
            derive_pattern(records)

    def test_insufficient_items_per_condition(self):
        records = [record("a", "i1", 1.0), record("a", "i2", 2.0), record("b", "i1", 1.5)]
        with pytest.raises(InsufficientDataError):
            derive_pattern(records)

    def test_unselected_factor_pairs_reported_nonsignificant(self):
        records = gaussian_records({"a": 0.0, "b": 0.0}, n_items=25, seed=41)
        derived = derive_pattern(records)
        if not derived.predictors[0].retained:
            (pair,) = derived.pairs
            assert pair.source == "unselected"
            assert not pair.significant

    def test_mirror_consistency(self):
        records = gaussian_records({"a": -1.0, "b": 0.0, "c": 1.0}, n_items=20, seed=7)
        derived = derive_pattern(records)
        for x, y in itertools.permutations(["a", "b", "c"], 2):
            pair_xy = derived.relation_between(x, y)
            pair_yx = derived.relation_between(y, x)
            assert pair_xy[0] is pair_yx[0]
            assert pair_xy[1] == -pair_yx[1]
            if pair_xy[0].significant:
                assert (pair_xy[1] < 0) != (pair_yx[1] < 0)


class TestForcedContrasts:
    def test_crossed_design_with_forced_cell_contrast(self):
        design = Design(factors=(
            DesignFactor("typicality", ("typical", "atypical")),
            DesignFactor("quantifier", ("most", "few")),
        ))
        rng = np.random.default_rng(8)
        cells = {
            "typical.most": 4.0, "typical.few": 5.5,
            "atypical.most": 8.0, "atypical.few": 8.0,
        }
        records = []
        for i in range(40):
            bump = rng.normal(0, 0.8)
            for cond, mu in cells.items():
                records.append(record(cond, f"it{i:03d}", mu + bump + rng.normal(0, 0.7)))
        config = AnalysisConfig(
            design=design,
            interactions=(("typicality", "quantifier"),),
            forced_contrasts=(ForcedContrast("typical.most", "typical.few"),),
        )
        derived = derive_pattern(records, config)
        typ = derived.relation_between("typical", "atypical")
        assert typ[0].significant and typ[1] < 0
        forced = derived.relation_between("typical.most", "typical.few")
        assert forced[0].source == "forced"
        assert forced[0].significant and forced[1] < 0


def expected(experiment, *relations):
    return ExpectedPattern(
        experiment_id=experiment,
        relations=tuple(PatternRelation(a, b, rel) for a, rel, b in relations),
    )


class TestComparePatterns:
    def test_full_match_single_lower(self):
        records = gaussian_records({"typical": -2.0, "atypical": 0.0}, n_items=40, seed=2)
        derived = derive_pattern(records)
        comp = compare_patterns(derived, expected("exp", ("typical", "LOWER", "atypical")))
        assert comp.classification == FULL_MATCH
        assert comp.outcomes[0].verdict == MATCH
        assert comp.n_items_analyzed == 80

    def test_partial_match_three_conditions(self):
        # bc clearly lowest; related vs unrelated truly equal -> the expected
        # related LOWER unrelated relation fails, the others hold
        records = gaussian_records(
            {"bc": -3.0, "related": 0.0, "unrelated": 0.0}, n_items=40, seed=6
        )
        derived = derive_pattern(records)
        comp = compare_patterns(derived, expected(
            "exp",
            ("bc", "LOWER", "related"),
            ("related", "LOWER", "unrelated"),
            ("bc", "LOWER", "unrelated"),
        ))
        verdicts = {o.expected: o.verdict for o in comp.outcomes}
        assert verdicts["bc LOWER related"] == MATCH
        assert verdicts["bc LOWER unrelated"] == MATCH
        if verdicts["related LOWER unrelated"] == MISMATCH:
            assert comp.classification == PARTIAL

    def test_no_difference_match(self):
        records = gaussian_records({"fr": 0.0, "u": 0.0}, n_items=40, seed=13)
        derived = derive_pattern(records)
        comp = compare_patterns(derived, expected("exp", ("fr", "NO_DIFFERENCE", "u")))
        if not derived.predictors[0].retained:
            assert comp.outcomes[0].verdict == MATCH

    def test_excluded_condition_is_unevaluable(self):
        records = gaussian_records({"a": -1.0, "b": 0.0}, n_items=30, seed=4)
        records += [record("ghost", f"it{i:03d}", None, excluded=True, reason="oov_target")
                    for i in range(30)]
        derived = derive_pattern(records)
        comp = compare_patterns(derived, expected(
            "exp", ("a", "LOWER", "b"), ("a", "LOWER", "ghost"),
        ))
        verdicts = [o.verdict for o in comp.outcomes]
        assert verdicts[1] == UNEVALUABLE
        assert comp.classification in (FULL_MATCH, MISMATCH)  # ghost excluded from denominator

    def test_unknown_condition_raises(self):
        records = gaussian_records({"a": -1.0, "b": 0.0}, n_items=20, seed=4)
        derived = derive_pattern(records)
        with pytest.raises(ValueError, match="unknown condition"):
            compare_patterns(derived, expected("exp", ("a", "LOWER", "nowhere")))

    def test_experiment_mismatch_raises(self):
        records = gaussian_records({"a": -1.0, "b": 0.0}, n_items=20, seed=4)
        derived = derive_pattern(records)
        with pytest.raises(ValueError, match="pattern is for"):
            compare_patterns(derived, expected("other", ("a", "LOWER", "b")))


class TestClassificationRules:
    def brute_force(self, verdicts):
        evaluable = [v for v in verdicts if v != UNEVALUABLE]
        if not evaluable:
            return UNEVALUABLE
        n_match = sum(v == MATCH for v in evaluable)
        if n_match == len(evaluable):
            return FULL_MATCH
        if n_match == 0:
            return MISMATCH
        return PARTIAL

    def test_exhaustive_up_to_four_relations(self):
        options = (MATCH, MISMATCH, UNEVALUABLE)
        for k in range(1, 5):
            for combo in itertools.product(options, repeat=k):
                assert classify_outcomes(combo) == self.brute_force(combo)

    def test_coverage_summary_counts(self):
        records = [
            record("a", "i1", 1.0), record("a", "i2", None, excluded=True, reason="oov_target"),
            record("b", "i1", 2.0),
        ]
        cov = summarize_coverage(records)
        assert cov.per_condition["a"].analyzed == 1
        assert cov.per_condition["a"].excluded == 1
        assert cov.n_analyzed == 2 and cov.n_excluded == 1
        assert cov.low_coverage
