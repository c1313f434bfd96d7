"""Word-level LSTM surprisal over condition-tagged experimental stimuli, with
mixed-effects tests of whether surprisal reproduces published N400 effect
patterns."""

__version__ = "0.1.0"
WEIGHT_FORMAT_VERSION = 1

from n400surprisal.analysis import (
    AnalysisConfig,
    CoverageWarning,
    DerivedPattern,
    ForcedContrast,
    InsufficientDataError,
    PatternComparison,
    ScoredExperiment,
    SurprisalRecord,
    compare_patterns,
    compute_surprisals,
    derive_pattern,
    read_surprisal_csv,
    write_surprisal_csv,
)
from n400surprisal.corpus import (
    CorpusFormatError,
    Design,
    DesignFactor,
    ExpectedPattern,
    ExperimentSpec,
    PatternRelation,
    StimulusItem,
    ValidationError,
    parse_expected_pattern,
    parse_stimulus_file,
    serialize_expected_pattern,
    serialize_stimulus_items,
    single_factor_design,
    validate_experiment,
)
from n400surprisal.lm import (
    LstmLanguageModel,
    LstmParams,
    TrainingConfig,
    Vocabulary,
    build_vocab,
    next_word_distribution,
    surprisal_bits,
    tokenize,
)
from n400surprisal.pipeline import (
    ReportBundle,
    analyze_records,
    bundle_to_json,
    bundle_to_table,
    load_experiment_configs,
    run_pipeline,
    shipped_data_dir,
)
from n400surprisal.stats import (
    Dataset,
    FittedLmm,
    LinearMixedModel,
    ModelFormula,
    backward_model_selection,
    fit_lmm,
    likelihood_ratio_test,
    pairwise_contrast,
    satterthwaite_df,
    type3_anova,
)

__all__ = [
    "AnalysisConfig",
    "CorpusFormatError",
    "CoverageWarning",
    "Dataset",
    "derive_pattern",
    "DerivedPattern",
    "Design",
    "DesignFactor",
    "ExpectedPattern",
    "ExperimentSpec",
    "FittedLmm",
    "ForcedContrast",
    "InsufficientDataError",
    "LinearMixedModel",
    "LstmLanguageModel",
    "LstmParams",
    "ModelFormula",
    "PatternComparison",
    "PatternRelation",
    "ReportBundle",
    "ScoredExperiment",
    "StimulusItem",
    "SurprisalRecord",
    "TrainingConfig",
    "ValidationError",
    "Vocabulary",
    "WEIGHT_FORMAT_VERSION",
    "analyze_records",
    "backward_model_selection",
    "build_vocab",
    "bundle_to_json",
    "bundle_to_table",
    "compare_patterns",
    "compute_surprisals",
    "fit_lmm",
    "likelihood_ratio_test",
    "load_experiment_configs",
    "next_word_distribution",
    "pairwise_contrast",
    "parse_expected_pattern",
    "parse_stimulus_file",
    "read_surprisal_csv",
    "run_pipeline",
    "satterthwaite_df",
    "serialize_expected_pattern",
    "serialize_stimulus_items",
    "shipped_data_dir",
    "single_factor_design",
    "surprisal_bits",
    "tokenize",
    "type3_anova",
    "validate_experiment",
    "write_surprisal_csv",
]
