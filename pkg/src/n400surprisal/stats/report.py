"""Structured text serialization of a fitted mixed model.

Key-value lines plus aligned matrix blocks, with stable field ordering so
reports can be compared byte-for-byte in golden-file tests.  All floats are
rounded to six significant digits before formatting.
"""

from __future__ import annotations

from n400surprisal.stats.lmm import FittedLmm

HEADER_NOTE = (
    "covariance structure: random intercepts only; condition-by-group random "
    "slopes are not modeled and their omission is an untestable assumption here"
)


def _fmt(value: float) -> str:
    return f"{value:.6g}"


def format_fit_report(fit: FittedLmm, response_name: str = "response") -> str:
    lines = [
        "== linear mixed model fit ==",
        f"note: {HEADER_NOTE}",
        f"formula: {fit.formula.describe(response_name)}",
        f"criterion: {fit.criterion.upper()}",
        f"n_obs: {fit.n_obs}",
        f"converged: {str(fit.convergence.converged).lower()}",
        f"singular: {str(fit.singular).lower()}",
        f"deviance_reml: {_fmt(fit.deviance_reml)}",
        f"deviance_ml: {_fmt(fit.deviance_ml)}",
        "coefficients:",
    ]
    width = max(len(label) for label in fit.beta_labels)
    for label, value in zip(fit.beta_labels, fit.beta):
        lines.append(f"  {label:<{width}}  {_fmt(value)}")
    lines.append("vcov:")
    for i, label in enumerate(fit.beta_labels):
        row = "  ".join(_fmt(v) for v in fit.beta_cov[i])
        lines.append(f"  {label:<{width}}  {row}")
    lines.append("variance_components:")
    names = list(fit.formula.random_intercepts) + ["residual"]
    name_width = max(len(n) for n in names)
    for name in names:
        lines.append(f"  {name:<{name_width}}  {_fmt(fit.variance_components[name])}")
    lines.append("convergence_trace:")
    lines.append(f"  evaluations: {fit.convergence.n_evaluations}")
    lines.append(f"  message: {fit.convergence.message}")
    for theta, deviance in fit.convergence.trace:
        theta_txt = ", ".join(_fmt(t) for t in theta)
        lines.append(f"  theta: [{theta_txt}]  deviance: {_fmt(deviance)}")
    return "\n".join(lines) + "\n"


def format_fit_summary(fit: FittedLmm, response_name: str = "response") -> dict:
    """Compact machine-readable summary (no optimizer trace, so the content
    is stable across platforms and library versions)."""
    round6 = lambda v: float(f"{v:.6g}")
    return {
        "formula": fit.formula.describe(response_name),
        "criterion": fit.criterion,
        "n_obs": fit.n_obs,
        "converged": fit.convergence.converged,
        "singular": fit.singular,
        "coefficients": {
            label: round6(value) for label, value in zip(fit.beta_labels, fit.beta)
        },
        "variance_components": {
            name: round6(value) for name, value in fit.variance_components.items()
        },
        "deviance_reml": round6(fit.deviance_reml),
        "deviance_ml": round6(fit.deviance_ml),
        "note": HEADER_NOTE,
    }
