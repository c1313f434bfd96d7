"""Hypothesis tests on fitted mixed models.

Implements the analysis toolchain used throughout: likelihood-ratio tests of
nested ML fits, backward model selection, Type III Wald F tests with
Satterthwaite denominator degrees of freedom, and pairwise t contrasts
between factor levels.  Degrees of freedom are real-valued and never
rounded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg as sla

from n400surprisal.stats.data import Dataset, ModelFormula, sum_to_zero_codes
from n400surprisal.stats.lmm import (
    ML,
    FitError,
    FittedLmm,
    _v0_solver,
    deviance_at_components,
    fit_lmm,
)
from n400surprisal.stats.special import chi_square_sf, f_sf, t_sf

_MAX_DF = 1e7


class SingularHessianError(RuntimeError):
    def __init__(self, cond: float):
        self.cond = cond
        super().__init__(
            f"variance-component Hessian is numerically singular (condition number {cond:.3e})"
        )


@dataclass(frozen=True)
class TestResult:
    """A single statistic with degrees of freedom and p-value."""

    kind: str                  # "chi_square" | "t" | "F"
    statistic: float
    df1: float                 # t/chi-square df, or F numerator df
    p: float
    label: str = ""
    df2: float | None = None   # F denominator df (Satterthwaite, real-valued)
    estimate: float | None = None
    se: float | None = None

    def __post_init__(self):
        if self.kind not in ("chi_square", "t", "F"):
            raise ValueError(f"unknown statistic kind {self.kind!r}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p-value {self.p} outside [0, 1]")
        if self.df1 <= 0 and self.kind != "chi_square":
            raise ValueError(f"degrees of freedom must be positive, got {self.df1}")
        if self.kind == "F" and (self.df2 is None or self.df2 <= 0):
            raise ValueError("F tests need positive denominator degrees of freedom")


def _delta_step(value: float) -> float:
    return min(1e-4 * value, 0.49 * value)


def _variance_of_contrast(fit: FittedLmm, contrast: np.ndarray, sigma: np.ndarray,
                          names: list[str]) -> float:
    """Var(c'beta) at arbitrary positive variance components."""
    x = fit._x
    z_list = [fit._z[name] for name in names]
    sigma_e = float(sigma[-1])
    gammas = sigma[:-1] / sigma_e
    solve, _ = _v0_solver(z_list, gammas, x.shape[0])
    xtvix = x.T @ solve(x)
    middle = sla.solve(xtvix, contrast, assume_a="pos")
    return sigma_e * float(contrast @ middle)


def satterthwaite_df(fit: FittedLmm, contrast: Sequence[float]) -> float:
    """Satterthwaite degrees of freedom for the t statistic of c'beta.

    df = 2 [Var(c'beta)]^2 / Var[Var(c'beta)] with the denominator from the
    delta method: the analytic gradient of Var(c'beta) in the variance
    components, combined with their asymptotic covariance (twice the inverse
    Hessian of the deviance in the variance components, by central finite
    differences at the optimum).  Components on the zero boundary are held
    fixed.  With no random terms this is exactly the residual df, n - p.
    """
    contrast = np.asarray(contrast, dtype=float)
    if contrast.shape != (fit.n_fixed_params,):
        raise ValueError(
            f"contrast length {contrast.size} != number of coefficients {fit.n_fixed_params}"
        )
    active = [name for name in fit.formula.random_intercepts
              if fit.variance_components[name] > 0.0]
    if not active:
        return fit.residual_df

    sigma = np.array([fit.variance_components[name] for name in active]
                     + [fit.sigma2_residual])
    # Var(c'beta) at the fitted components, via the stored V0 solve
    u_inner = fit._x @ (fit._xtvix_inv @ contrast)
    u = fit._solve_v0(u_inner)
    f_value = fit.sigma2_residual * float(contrast @ fit._xtvix_inv @ contrast)

    grad = np.empty(sigma.size)
    for j, name in enumerate(active):
        ztu = fit._z[name].T @ u
        grad[j] = float(ztu @ ztu)
    grad[-1] = float(u @ u)

    hessian = _deviance_hessian(fit, sigma, active)
    try:
        cho = sla.cho_factor(hessian, lower=True)
    except sla.LinAlgError:
        raise SingularHessianError(float(np.linalg.cond(hessian))) from None
    cond = float(np.linalg.cond(hessian))
    if cond > 1e12:
        raise SingularHessianError(cond)
    h_inv_grad = sla.cho_solve(cho, grad)
    denom = float(grad @ h_inv_grad)  # = Var[Var(c'beta)] / 2
    if denom <= 0.0:
        return _MAX_DF
    return float(min(f_value * f_value / denom, _MAX_DF))


def _deviance_hessian(fit: FittedLmm, sigma: np.ndarray, active: list[str]) -> np.ndarray:
    """Central-difference Hessian of the deviance in the variance components."""
    x = fit._x
    y = fit._dataset.response
    z_list = [fit._z[name] for name in active]
    criterion = fit.criterion

    def dev(s):
        return deviance_at_components(x, y, z_list, s, criterion)

    k = sigma.size
    steps = np.array([_delta_step(v) for v in sigma])
    hessian = np.empty((k, k))
    base = dev(sigma)
    for i in range(k):
        si_plus = sigma.copy()
        si_plus[i] += steps[i]
        si_minus = sigma.copy()
        si_minus[i] -= steps[i]
        hessian[i, i] = (dev(si_plus) - 2.0 * base + dev(si_minus)) / steps[i] ** 2
        for j in range(i + 1, k):
            spp = sigma.copy(); spp[[i, j]] += [steps[i], steps[j]]
            spm = sigma.copy(); spm[i] += steps[i]; spm[j] -= steps[j]
            smp = sigma.copy(); smp[i] -= steps[i]; smp[j] += steps[j]
            smm = sigma.copy(); smm[[i, j]] -= [steps[i], steps[j]]
            hessian[i, j] = hessian[j, i] = (
                dev(spp) - dev(spm) - dev(smp) + dev(smm)
            ) / (4.0 * steps[i] * steps[j])
    return hessian


def variance_of_contrast_gradient(fit: FittedLmm, contrast: Sequence[float]):
    """Analytic gradient of Var(c'beta) in the active variance components,
    alongside a matching finite-difference evaluator (for verification)."""
    contrast = np.asarray(contrast, dtype=float)
    active = [name for name in fit.formula.random_intercepts
              if fit.variance_components[name] > 0.0]
    sigma = np.array([fit.variance_components[name] for name in active]
                     + [fit.sigma2_residual])
    u_inner = fit._x @ (fit._xtvix_inv @ contrast)
    u = fit._solve_v0(u_inner)
    grad = np.empty(sigma.size)
    for j, name in enumerate(active):
        ztu = fit._z[name].T @ u
        grad[j] = float(ztu @ ztu)
    grad[-1] = float(u @ u)

    def finite_difference(step_scale: float = 1e-5):
        out = np.empty(sigma.size)
        for j in range(sigma.size):
            h = max(sigma[j] * step_scale, 1e-12)
            up = sigma.copy(); up[j] += h
            down = sigma.copy(); down[j] -= h
            out[j] = (
                _variance_of_contrast(fit, contrast, up, active)
                - _variance_of_contrast(fit, contrast, down, active)
            ) / (2.0 * h)
        return out

    return grad, finite_difference


def likelihood_ratio_test(full: FittedLmm, reduced: FittedLmm) -> TestResult:
    """Chi-square LRT of two nested ML fits on the same dataset."""
    for fit, role in ((full, "full"), (reduced, "reduced")):
        if fit.criterion != ML:
            raise ValueError(
                f"{role} model was fitted by {fit.criterion.upper()}; likelihood-ratio "
                "tests require ML fits (REML deviances are not comparable across "
                "fixed-effect structures)"
            )
    if not np.array_equal(full._dataset.response, reduced._dataset.response):
        raise ValueError("fits are not on the same dataset")
    if not reduced.formula.is_nested_in(full.formula):
        raise ValueError("reduced model is not nested in the full model")
    df = full.n_fixed_params - reduced.n_fixed_params
    statistic = reduced.deviance_ml - full.deviance_ml
    if statistic < -1e-6:
        raise FitError(
            f"negative likelihood-ratio statistic {statistic:.3e}; the full fit did not converge"
        )
    statistic = max(statistic, 0.0)
    label = f"{full.formula.describe()} vs {reduced.formula.describe()}"
    if df == 0:
        return TestResult(kind="chi_square", statistic=statistic, df1=0.0, p=1.0, label=label)
    return TestResult(
        kind="chi_square",
        statistic=statistic,
        df1=float(df),
        p=chi_square_sf(statistic, float(df)),
        label=label,
    )


@dataclass
class SelectionResult:
    selected: ModelFormula
    tests: dict[str, TestResult]
    final_fit_ml: FittedLmm
    dropped: tuple[str, ...] = ()


def _droppable(formula: ModelFormula) -> list[tuple[str, ...]]:
    """Terms not contained in any remaining higher-order term (marginality)."""
    out = []
    for term in formula.fixed_terms:
        contained = any(
            term != other and set(term) <= set(other) for other in formula.fixed_terms
        )
        if not contained:
            out.append(term)
    return out


def backward_model_selection(
    dataset: Dataset,
    candidate_terms: Sequence[Sequence[str]],
    random_intercepts: Sequence[str] = (),
    alpha: float = 0.05,
) -> SelectionResult:
    """Backward selection by likelihood-ratio tests.

    Starts from all candidate terms, repeatedly refits without each droppable
    term and removes the one with the largest LRT p-value among those at or
    above ``alpha`` (ties drop the later-declared term), until every
    remaining term is significant.  Survivors are reported with their LRT
    against the final model; dropped terms keep the result from their drop
    step.
    """
    terms = tuple(tuple(t) for t in candidate_terms)
    if not terms:
        raise ValueError("no candidate terms")
    formula = ModelFormula(fixed_terms=terms, random_intercepts=tuple(random_intercepts))
    declared_order = {term: i for i, term in enumerate(terms)}
    fits: dict[tuple, FittedLmm] = {}

    def fit_cached(f: ModelFormula) -> FittedLmm:
        key = f.fixed_terms
        if key not in fits:
            fits[key] = fit_lmm(dataset, f, criterion=ML)
        return fits[key]

    tests: dict[str, TestResult] = {}
    dropped: list[str] = []
    current = formula
    while current.fixed_terms:
        full_fit = fit_cached(current)
        step_results = []
        for term in _droppable(current):
            reduced_fit = fit_cached(current.without(term))
            step_results.append((term, likelihood_ratio_test(full_fit, reduced_fit)))
        removable = [(term, res) for term, res in step_results if res.p >= alpha]
        if not removable:
            break
        term, result = max(removable, key=lambda tr: (tr[1].p, declared_order[tr[0]]))
        tests[current.term_label(term)] = result
        dropped.append(current.term_label(term))
        current = current.without(term)

    final_fit = fit_cached(current)
    for term in current.fixed_terms:
        reduced_fit = fit_cached(current.without(term))
        tests[current.term_label(term)] = likelihood_ratio_test(final_fit, reduced_fit)
    return SelectionResult(
        selected=current, tests=tests, final_fit_ml=final_fit, dropped=tuple(dropped)
    )


def _multi_df_denominator(fit: FittedLmm, rows: np.ndarray) -> float:
    """Satterthwaite denominator df for a multi-row contrast (eigenvector
    decomposition of the contrast covariance, then the moment-matching
    combination of the per-direction dfs)."""
    cov = rows @ fit.beta_cov @ rows.T
    cov = 0.5 * (cov + cov.T)
    eigvals, eigvecs = np.linalg.eigh(cov)
    q = rows.shape[0]
    nus = []
    for i in range(q):
        direction = eigvecs[:, i] @ rows
        nus.append(satterthwaite_df(fit, direction))
    total = sum(nu / (nu - 2.0) for nu in nus if nu > 2.0)
    if total <= q:
        raise FitError(
            f"Satterthwaite denominator undefined (per-direction dfs {nus}); too little data"
        )
    return float(2.0 * total / (total - q))


def type3_anova(fit: FittedLmm, terms: Sequence[Sequence[str]] | None = None) -> list[TestResult]:
    """Type III Wald F test per fixed term (sum-to-zero coding is enforced
    by the fitting routine, which makes each term's block test the Type III
    hypothesis)."""
    results = []
    wanted = ([tuple(t) for t in terms] if terms is not None
              else list(fit.formula.fixed_terms))
    for term in wanted:
        label = fit.formula.term_label(tuple(term))
        if label not in fit.term_slices:
            raise ValueError(f"term {label!r} is not in the fitted model")
        block = fit.term_slices[label]
        q = block.stop - block.start
        rows = np.zeros((q, fit.n_fixed_params))
        for i, col in enumerate(range(block.start, block.stop)):
            rows[i, col] = 1.0
        beta_t = fit.beta[block]
        cov_t = fit.beta_cov[block, block]
        stat = float(beta_t @ sla.solve(cov_t, beta_t, assume_a="pos")) / q
        df2 = _multi_df_denominator(fit, rows)
        results.append(
            TestResult(
                kind="F", statistic=stat, df1=float(q), df2=df2,
                p=f_sf(stat, float(q), df2), label=label,
            )
        )
    return results


def _find_factor(fit: FittedLmm, level_a: str, level_b: str, factor: str | None):
    dataset = fit._dataset
    candidates = []
    model_factors = {f for term in fit.formula.fixed_terms for f in term}
    for name in model_factors:
        levels = dataset.fixed_levels[name]
        if level_a in levels and level_b in levels:
            candidates.append(name)
    if factor is not None:
        if factor not in model_factors:
            raise ValueError(f"factor {factor!r} is not in the fitted model")
        levels = dataset.fixed_levels[factor]
        for lvl in (level_a, level_b):
            if lvl not in levels:
                raise ValueError(f"unknown level {lvl!r} of factor {factor!r}")
        return factor
    if not candidates:
        raise ValueError(
            f"no fitted factor has both levels {level_a!r} and {level_b!r}"
        )
    if len(candidates) > 1:
        raise ValueError(
            f"levels {level_a!r}, {level_b!r} are ambiguous across factors {candidates}; "
            "pass factor= explicitly"
        )
    return candidates[0]


def _emm_contrast(fit: FittedLmm, factor: str, level_a: str, level_b: str) -> np.ndarray:
    """Contrast for the difference of estimated marginal means a - b.

    Under sum-to-zero coding other factors and interactions average out, so
    the contrast lives on the factor's main-effect columns alone.
    """
    codes = sum_to_zero_codes(fit._dataset.fixed_levels[factor])
    label = fit.formula.term_label((factor,))
    if label not in fit.term_slices:
        raise ValueError(f"factor {factor!r} has no main effect in the fitted model")
    block = fit.term_slices[label]
    contrast = np.zeros(fit.n_fixed_params)
    contrast[block] = codes[level_a] - codes[level_b]
    return contrast


def _t_result(fit: FittedLmm, contrast: np.ndarray, label: str) -> TestResult:
    estimate = float(contrast @ fit.beta)
    variance = float(contrast @ fit.beta_cov @ contrast)
    if variance <= 0.0:
        # a == b or an all-zero contrast: no sampling variability to test
        return TestResult(kind="t", statistic=0.0, df1=fit.residual_df, p=1.0,
                          label=label, estimate=estimate, se=0.0)
    se = math.sqrt(variance)
    t_stat = estimate / se
    df = satterthwaite_df(fit, contrast)
    p = min(2.0 * t_sf(abs(t_stat), df), 1.0)
    return TestResult(kind="t", statistic=t_stat, df1=df, p=p, label=label,
                      estimate=estimate, se=se)


def pairwise_contrast(
    fit: FittedLmm, level_a: str, level_b: str, factor: str | None = None
) -> TestResult:
    """Two-sided t test of the marginal-mean difference between two levels.

    Positive t means ``level_a`` has the higher fitted mean.  Degrees of
    freedom by the Satterthwaite method.
    """
    if level_a == level_b:
        return TestResult(kind="t", statistic=0.0, df1=fit.residual_df, p=1.0,
                          label=f"{level_a} - {level_b}", estimate=0.0, se=0.0)
    factor = _find_factor(fit, level_a, level_b, factor)
    contrast = _emm_contrast(fit, factor, level_a, level_b)
    return _t_result(fit, contrast, label=f"{level_a} - {level_b}")


def _cell_row(fit: FittedLmm, assignment: dict[str, str]) -> np.ndarray:
    """Design-matrix row of a cell mean; unassigned factors average out to
    zero under sum-to-zero coding."""
    dataset = fit._dataset
    row = np.zeros(fit.n_fixed_params)
    row[0] = 1.0
    for term in fit.formula.fixed_terms:
        label = fit.formula.term_label(term)
        block = fit.term_slices[label]
        if not set(term) <= set(assignment):
            continue  # averaged over: contributes zero
        part = np.ones(1)
        for name in term:
            codes = sum_to_zero_codes(dataset.fixed_levels[name])
            level = assignment[name]
            if level not in dataset.fixed_levels[name]:
                raise ValueError(f"unknown level {level!r} of factor {name!r}")
            part = np.kron(part, codes[level])
        row[block] = part
    return row


def cell_contrast(
    fit: FittedLmm, cell_a: dict[str, str], cell_b: dict[str, str], label: str = ""
) -> TestResult:
    """t test of the difference between two factor-level combinations
    (forced contrast), e.g. typical/most vs typical/few."""
    row_a = _cell_row(fit, cell_a)
    row_b = _cell_row(fit, cell_b)
    if not label:
        fmt = lambda cell: ".".join(cell[k] for k in sorted(cell))
        label = f"{fmt(cell_a)} - {fmt(cell_b)}"
    return _t_result(fit, row_a - row_b, label=label)
