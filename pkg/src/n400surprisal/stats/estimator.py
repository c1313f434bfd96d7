"""Estimator-style wrapper over the mixed-model fitting functions."""

from __future__ import annotations

from sklearn.base import BaseEstimator

from n400surprisal.stats.data import Dataset, ModelFormula
from n400surprisal.stats.inference import pairwise_contrast, type3_anova
from n400surprisal.stats.lmm import REML, fit_lmm


class LinearMixedModel(BaseEstimator):
    """Linear mixed model with random intercepts, in fit/result style.

    Parameters mirror ModelFormula: ``fixed_terms`` is a tuple of factor-name
    tuples, ``random_intercepts`` a tuple of grouping-factor names.
    """

    def __init__(
        self,
        fixed_terms: tuple = (),
        random_intercepts: tuple = (),
        criterion: str = REML,
    ):
        self.fixed_terms = fixed_terms
        self.random_intercepts = random_intercepts
        self.criterion = criterion

    def formula(self) -> ModelFormula:
        return ModelFormula(
            fixed_terms=tuple(tuple(t) for t in self.fixed_terms),
            random_intercepts=tuple(self.random_intercepts),
        )

    def fit(self, dataset: Dataset, y=None):
        self.result_ = fit_lmm(dataset, self.formula(), criterion=self.criterion)
        return self

    def _require_fitted(self):
        if not hasattr(self, "result_"):
            raise RuntimeError("model is not fitted; call fit() first")

    def anova(self):
        self._require_fitted()
        return type3_anova(self.result_)

    def contrast(self, level_a: str, level_b: str, factor: str | None = None):
        self._require_fitted()
        return pairwise_contrast(self.result_, level_a, level_b, factor)
