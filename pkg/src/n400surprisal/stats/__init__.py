"""Linear mixed-effects machinery: REML/ML fitting, likelihood-ratio model
selection, Type III Wald F tests, and Satterthwaite-df pairwise contrasts."""

from n400surprisal.stats.data import (
    Dataset,
    ModelFormula,
    RankDeficientError,
    design_matrix,
    sum_to_zero_codes,
)
from n400surprisal.stats.estimator import LinearMixedModel
from n400surprisal.stats.inference import (
    SelectionResult,
    SingularHessianError,
    TestResult,
    backward_model_selection,
    cell_contrast,
    likelihood_ratio_test,
    pairwise_contrast,
    satterthwaite_df,
    type3_anova,
    variance_of_contrast_gradient,
)
from n400surprisal.stats.lmm import (
    ML,
    REML,
    ConvergenceReport,
    FitError,
    FittedLmm,
    fit_lmm,
    profiled_deviance,
)
from n400surprisal.stats.report import format_fit_report, format_fit_summary
from n400surprisal.stats.special import chi_square_sf, f_sf, t_sf

__all__ = [
    "ConvergenceReport",
    "Dataset",
    "FitError",
    "FittedLmm",
    "LinearMixedModel",
    "ML",
    "ModelFormula",
    "RankDeficientError",
    "REML",
    "SelectionResult",
    "SingularHessianError",
    "TestResult",
    "backward_model_selection",
    "cell_contrast",
    "chi_square_sf",
    "design_matrix",
    "f_sf",
    "fit_lmm",
    "format_fit_report",
    "format_fit_summary",
    "likelihood_ratio_test",
    "pairwise_contrast",
    "profiled_deviance",
    "satterthwaite_df",
    "sum_to_zero_codes",
    "t_sf",
    "type3_anova",
    "variance_of_contrast_gradient",
]
