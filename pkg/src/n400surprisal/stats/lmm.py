"""Profiled REML/ML fitting of linear mixed models with random intercepts.

The variance components are profiled down to the ratios gamma_g =
sigma^2_g / sigma^2_e; fixed effects and the residual variance have closed
forms given the ratios.  The search runs on log(gamma) with a coarse grid
plus Brent refinement in one dimension and multi-start quasi-Newton above.
A fitted ratio below 1e-8 is reported as a singular fit with that component
pinned to exactly zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import linalg as sla
from scipy import optimize

from n400surprisal.stats.data import (
    Dataset,
    ModelFormula,
    check_full_rank,
    design_matrix,
    grouping_matrix,
)

SINGULAR_RATIO = 1e-8
_THETA_LO, _THETA_HI = -30.0, 18.0
_LOG_2PI = math.log(2.0 * math.pi)

REML = "reml"
ML = "ml"


class FitError(RuntimeError):
    """Optimizer failed to converge; carries the evaluation trace."""

    def __init__(self, message: str, trace=()):
        self.trace = tuple(trace)
        if self.trace:
            tail = "; ".join(
                f"theta={[round(v, 6) for v in th]} dev={dev:.6f}" for th, dev in self.trace[-5:]
            )
            message = f"{message} (last evaluations: {tail})"
        super().__init__(message)


@dataclass
class ConvergenceReport:
    converged: bool
    n_evaluations: int
    criterion_value: float
    message: str
    trace: tuple = field(repr=False, default=())


@dataclass
class FittedLmm:
    """Fixed-effect estimates, variance components, and fit diagnostics.

    ``deviance_reml`` and ``deviance_ml`` are both evaluated at the fitted
    variance ratios, each with its own profiled residual variance; the one
    matching ``criterion`` is the optimized value.
    """

    criterion: str
    beta: np.ndarray
    beta_labels: tuple[str, ...]
    beta_cov: np.ndarray
    variance_components: dict[str, float]
    deviance_reml: float
    deviance_ml: float
    singular: bool
    convergence: ConvergenceReport
    n_obs: int
    formula: ModelFormula
    term_slices: dict[str, slice] = field(repr=False)
    _dataset: Dataset = field(repr=False)
    _x: np.ndarray = field(repr=False)
    _z: dict[str, np.ndarray] = field(repr=False)
    _gammas: dict[str, float] = field(repr=False)
    _xtvix_inv: np.ndarray = field(repr=False)
    _solve_v0: Callable[[np.ndarray], np.ndarray] = field(repr=False)

    @property
    def sigma2_residual(self) -> float:
        return self.variance_components["residual"]

    @property
    def n_fixed_params(self) -> int:
        return self.beta.size

    @property
    def residual_df(self) -> float:
        return float(self.n_obs - self.n_fixed_params)


def _v0_solver(z_list: Sequence[np.ndarray], gammas: np.ndarray, n_obs: int):
    """Return (solve, logdet) for V0 = I + sum(gamma_g Z_g Z_g')."""
    active = [(z, g) for z, g in zip(z_list, gammas) if g > 0.0]
    if not active:
        return (lambda b: b), 0.0
    if len(active) == 1:
        z, gamma = active[0]
        counts = z.sum(axis=0)
        weights = gamma / (1.0 + gamma * counts)
        logdet = float(np.sum(np.log1p(gamma * counts)))

        def solve(b, _z=z, _w=weights):
            zt_b = _z.T @ b
            return b - _z @ (zt_b * (_w[:, None] if b.ndim == 2 else _w))

        return solve, logdet
    v0 = np.eye(n_obs)
    for z, gamma in active:
        v0 += gamma * (z @ z.T)
    cho = sla.cho_factor(v0, lower=True)
    logdet = 2.0 * float(np.sum(np.log(np.diag(cho[0]))))
    return (lambda b: sla.cho_solve(cho, b)), logdet


@dataclass
class _Profile:
    beta: np.ndarray
    rss_v: float
    logdet_v0: float
    logdet_xtvix: float
    xtvix: np.ndarray
    solve_v0: Callable

    def sigma2(self, criterion: str, n_obs: int, n_params: int) -> float:
        denom = n_obs if criterion == ML else n_obs - n_params
        return max(self.rss_v / denom, 1e-300)

    def deviance(self, criterion: str, n_obs: int, n_params: int) -> float:
        s2 = self.sigma2(criterion, n_obs, n_params)
        if criterion == ML:
            return n_obs * (_LOG_2PI + math.log(s2)) + self.logdet_v0 + n_obs
        return ((n_obs - n_params) * (_LOG_2PI + math.log(s2))
                + self.logdet_v0 + self.logdet_xtvix + (n_obs - n_params))


def _profile(x: np.ndarray, y: np.ndarray, z_list, gammas: np.ndarray) -> _Profile:
    solve, logdet_v0 = _v0_solver(z_list, gammas, x.shape[0])
    vi_x = solve(x)
    vi_y = solve(y)
    xtvix = x.T @ vi_x
    cho = sla.cho_factor(xtvix, lower=True)
    beta = sla.cho_solve(cho, x.T @ vi_y)
    logdet_xtvix = 2.0 * float(np.sum(np.log(np.diag(cho[0]))))
    resid = y - x @ beta
    rss_v = float(resid @ (vi_y - vi_x @ beta))
    return _Profile(beta=beta, rss_v=rss_v, logdet_v0=logdet_v0,
                    logdet_xtvix=logdet_xtvix, xtvix=xtvix, solve_v0=solve)


def deviance_at_components(
    x: np.ndarray,
    y: np.ndarray,
    z_list: Sequence[np.ndarray],
    sigma: Sequence[float],
    criterion: str,
) -> float:
    """Deviance (-2 log lik) in the full variance-component parameterization.

    ``sigma`` lists the grouping variances followed by the residual variance.
    Used by the Satterthwaite Hessian; consistent with the profiled criterion
    at its optimum.
    """
    sigma = np.asarray(sigma, dtype=float)
    sigma_e = float(sigma[-1])
    if sigma_e <= 0.0 or np.any(sigma[:-1] < 0.0):
        raise ValueError("variance components must be non-negative with positive residual")
    gammas = sigma[:-1] / sigma_e
    prof = _profile(x, y, z_list, gammas)
    n_obs, n_params = x.shape
    quad = prof.rss_v / sigma_e
    if criterion == ML:
        return n_obs * (_LOG_2PI + math.log(sigma_e)) + prof.logdet_v0 + quad
    # log|X'V^-1X| picks up -p*log(sigma_e) relative to the V0 version; it
    # cancels against the +p inside n*log(sigma_e), leaving (n-p) overall.
    return ((n_obs - n_params) * (_LOG_2PI + math.log(sigma_e))
            + prof.logdet_v0 + prof.logdet_xtvix + quad)


def profiled_criterion_derivative(
    x: np.ndarray, y: np.ndarray, z: np.ndarray, gamma: float, criterion: str
) -> float:
    """d/d(gamma) of the profiled deviance for a single grouping factor.

    Uses the envelope theorem (the GLS residual's dependence on gamma drops
    out at the optimum of beta), so the derivative is exact and evaluated at
    the derivative's own scale, which lets root-finding localize the optimum
    far below the deviance's floating-point noise floor.
    """
    solve, _ = _v0_solver([z], np.array([gamma]), x.shape[0])
    vi_x = solve(x)
    vi_y = solve(y)
    xtvix = x.T @ vi_x
    beta = sla.solve(xtvix, x.T @ vi_y, assume_a="pos")
    resid = y - x @ beta
    vi_r = vi_y - vi_x @ beta
    rss_v = float(resid @ vi_r)
    a = z.T @ vi_r
    quad_term = -float(a @ a)
    tr_vz = float(np.sum(z * solve(z)))
    n_obs, n_params = x.shape
    if criterion == ML:
        return n_obs * quad_term / rss_v + tr_vz
    m = x.T @ solve(z)
    tr_g = float(np.trace(sla.solve(xtvix, m @ m.T, assume_a="pos")))
    return (n_obs - n_params) * quad_term / rss_v + tr_vz - tr_g


def _refine_root(x, y, z, theta: float, criterion: str) -> float:
    """Bisect the stationarity condition d'(gamma) = 0 around Brent's
    estimate; falls back to the estimate when no sign change brackets it."""
    gamma = math.exp(theta)

    def deriv(g: float) -> float:
        return profiled_criterion_derivative(x, y, z, g, criterion)

    lo, hi = 0.5 * gamma, 2.0 * gamma
    d_lo, d_hi = deriv(lo), deriv(hi)
    for _ in range(10):
        if d_lo < 0.0 <= d_hi:
            break
        if d_lo >= 0.0:
            lo *= 0.5
            d_lo = deriv(lo)
        else:
            hi *= 2.0
            d_hi = deriv(hi)
    else:
        return theta
    if not (d_lo < 0.0 <= d_hi):
        return theta
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if deriv(mid) < 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-16 * hi:
            break
    return math.log(0.5 * (lo + hi))


def _optimize_ratios(objective, k: int, trace, theta_start=None):
    """Minimize the profiled deviance over theta = log(gamma)."""
    if k == 1:
        grid = np.linspace(_THETA_LO, _THETA_HI, 49)
        values = [objective(np.array([t])) for t in grid]
        best = int(np.argmin(values))
        lo = grid[max(best - 1, 0)]
        hi = grid[min(best + 1, len(grid) - 1)]
        result = optimize.minimize_scalar(
            lambda t: objective(np.array([t])),
            bounds=(lo, hi), method="bounded",
            options={"xatol": 1e-12, "maxiter": 500},
        )
        if not result.success:
            raise FitError(f"variance-ratio search failed: {result.message}", trace)
        return np.array([float(result.x)]), True, str(result.message)
    starts = [np.zeros(k), np.full(k, -4.0), np.full(k, 2.0)]
    if theta_start is not None:
        starts.insert(0, np.asarray(theta_start, dtype=float))
    best_result = None
    any_success = False
    for start in starts:
        result = optimize.minimize(
            objective, start, method="L-BFGS-B",
            bounds=[(_THETA_LO, _THETA_HI)] * k,
            options={"ftol": 1e-14, "gtol": 1e-10, "maxiter": 500},
        )
        any_success = any_success or result.success
        if best_result is None or result.fun < best_result.fun:
            best_result = result
    if not any_success:
        raise FitError(f"variance-ratio search failed: {best_result.message}", trace)
    return np.asarray(best_result.x, dtype=float), True, str(best_result.message)


def fit_lmm(
    dataset: Dataset,
    formula: ModelFormula,
    criterion: str = REML,
    theta_start: Sequence[float] | None = None,
) -> FittedLmm:
    """Fit a linear mixed model by profiled REML or ML.

    The design matrix uses sum-to-zero contrasts throughout (required for the
    Type III tests downstream).  Singular fits (a variance ratio on the zero
    boundary) are flagged, not raised.
    """
    criterion = criterion.lower()
    if criterion not in (REML, ML):
        raise ValueError(f"criterion must be 'reml' or 'ml', got {criterion!r}")
    x, labels, term_slices = design_matrix(dataset, formula)
    check_full_rank(x, labels)
    y = dataset.response
    names = list(formula.random_intercepts)
    z_list = [grouping_matrix(dataset, name) for name in names]
    n_obs, n_params = x.shape
    if n_obs <= n_params:
        raise ValueError(f"need more observations ({n_obs}) than fixed parameters ({n_params})")

    trace: list[tuple[tuple[float, ...], float]] = []

    def objective(theta: np.ndarray) -> float:
        gammas = np.exp(theta)
        dev = _profile(x, y, z_list, gammas).deviance(criterion, n_obs, n_params)
        trace.append((tuple(float(t) for t in theta), float(dev)))
        return dev

    singular = False
    if names:
        theta_hat, converged, message = _optimize_ratios(
            objective, len(names), trace, theta_start
        )
        if len(names) == 1 and theta_hat[0] > math.log(SINGULAR_RATIO):
            # exact stationarity beats the deviance's float noise floor
            theta_hat = np.array([_refine_root(x, y, z_list[0], theta_hat[0], criterion)])
        gammas = np.exp(theta_hat)
        if np.any(gammas < SINGULAR_RATIO):
            singular = True
            gammas = np.where(gammas < SINGULAR_RATIO, 0.0, gammas)
    else:
        gammas = np.zeros(0)
        converged, message = True, "closed form (no random terms)"

    prof = _profile(x, y, z_list, gammas)
    dev_value = prof.deviance(criterion, n_obs, n_params)
    sigma2_e = prof.sigma2(criterion, n_obs, n_params)
    components = {name: float(g * sigma2_e) for name, g in zip(names, gammas)}
    components["residual"] = float(sigma2_e)

    xtvix_inv = sla.inv(prof.xtvix)
    beta_cov = sigma2_e * xtvix_inv
    beta_cov = 0.5 * (beta_cov + beta_cov.T)

    report = ConvergenceReport(
        converged=converged,
        n_evaluations=len(trace),
        criterion_value=float(dev_value),
        message=message,
        trace=tuple(trace),
    )
    return FittedLmm(
        criterion=criterion,
        beta=prof.beta,
        beta_labels=labels,
        beta_cov=beta_cov,
        variance_components=components,
        deviance_reml=float(prof.deviance(REML, n_obs, n_params)),
        deviance_ml=float(prof.deviance(ML, n_obs, n_params)),
        singular=singular,
        convergence=report,
        n_obs=n_obs,
        formula=formula,
        term_slices=term_slices,
        _dataset=dataset,
        _x=x,
        _z=dict(zip(names, z_list)),
        _gammas=dict(zip(names, (float(g) for g in gammas))),
        _xtvix_inv=xtvix_inv,
        _solve_v0=prof.solve_v0,
    )


def profiled_deviance(fit: FittedLmm, gammas: Sequence[float]) -> float:
    """Profiled deviance of a fit's model at arbitrary variance ratios.

    Exposes the criterion surface for optimum-stability checks.
    """
    z_list = [fit._z[name] for name in fit.formula.random_intercepts]
    prof = _profile(fit._x, fit._dataset.response, z_list, np.asarray(gammas, dtype=float))
    return prof.deviance(fit.criterion, fit.n_obs, fit.n_fixed_params)
