"""Survival functions for the chi-square, t, and F distributions.

All three are evaluated through the regularized incomplete gamma and beta
functions, computed by power series and continued fractions (modified
Lentz iteration).  Real-valued degrees of freedom are supported throughout,
which the Satterthwaite approximation requires.
"""

from __future__ import annotations

import math

_MAX_ITER = 600
_LENTZ_TINY = 1e-300
_CONV_EPS = 1e-15


class SpecialFunctionError(ArithmeticError):
    """Raised when a series or continued fraction fails to converge."""


def _gamma_p_series(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x) by power series (x < a+1)."""
    term = 1.0 / a
    total = term
    denom = a
    for _ in range(_MAX_ITER):
        denom += 1.0
        term *= x / denom
        total += term
        if abs(term) < abs(total) * _CONV_EPS:
            return total * math.exp(-x + a * math.log(x) - math.lgamma(a))
    raise SpecialFunctionError(f"incomplete gamma series did not converge (a={a}, x={x})")


def _gamma_q_contfrac(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x) by continued fraction (x >= a+1)."""
    b = x + 1.0 - a
    c = 1.0 / _LENTZ_TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _LENTZ_TINY:
            d = _LENTZ_TINY
        c = b + an / c
        if abs(c) < _LENTZ_TINY:
            c = _LENTZ_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CONV_EPS:
            return h * math.exp(-x + a * math.log(x) - math.lgamma(a))
    raise SpecialFunctionError(f"incomplete gamma fraction did not converge (a={a}, x={x})")


def regularized_gamma_q(a: float, x: float) -> float:
    """Upper regularized incomplete gamma Q(a, x) = Gamma(a, x) / Gamma(a)."""
    if a <= 0.0:
        raise ValueError(f"shape parameter must be positive, got {a}")
    if x < 0.0:
        raise ValueError(f"argument must be non-negative, got {x}")
    if x == 0.0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _gamma_p_series(a, x)
    return _gamma_q_contfrac(a, x)


def _beta_contfrac(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _LENTZ_TINY:
        d = _LENTZ_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _LENTZ_TINY:
            d = _LENTZ_TINY
        c = 1.0 + aa / c
        if abs(c) < _LENTZ_TINY:
            c = _LENTZ_TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _LENTZ_TINY:
            d = _LENTZ_TINY
        c = 1.0 + aa / c
        if abs(c) < _LENTZ_TINY:
            c = _LENTZ_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CONV_EPS:
            return h
    raise SpecialFunctionError(f"incomplete beta fraction did not converge (a={a}, b={b}, x={x})")


def regularized_beta(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if a <= 0.0 or b <= 0.0:
        raise ValueError(f"shape parameters must be positive, got a={a}, b={b}")
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"argument must lie in [0, 1], got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    # The fraction converges fast on one side of the mean a/(a+b); use the
    # symmetry I_x(a,b) = 1 - I_{1-x}(b,a) on the other.
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_contfrac(a, b, x) / a
    return 1.0 - front * _beta_contfrac(b, a, 1.0 - x) / b


def chi_square_sf(x: float, df: float) -> float:
    """Survival function P(X > x) of the chi-square distribution.

    Parameters
    ----------
    x : float
        Quantile; values <= 0 return 1.
    df : float
        Degrees of freedom, real-valued, > 0.
    """
    if df <= 0.0:
        raise ValueError(f"degrees of freedom must be positive, got {df}")
    if not math.isfinite(x):
        if math.isnan(x):
            raise ValueError("quantile is NaN")
        return 0.0 if x > 0 else 1.0
    if x <= 0.0:
        return 1.0
    return regularized_gamma_q(df / 2.0, x / 2.0)


def t_sf(x: float, df: float) -> float:
    """One-sided survival function P(T > x) of Student's t distribution.

    ``2 * t_sf(abs(x), df)`` is the two-sided p-value.  Monotone
    non-increasing in ``x``; ``t_sf(0, df) == 0.5`` for any ``df``.
    """
    if df <= 0.0:
        raise ValueError(f"degrees of freedom must be positive, got {df}")
    if not math.isfinite(x):
        if math.isnan(x):
            raise ValueError("quantile is NaN")
        return 0.0 if x > 0 else 1.0
    if x == 0.0:
        return 0.5
    # P(|T| > |x|) = I_z(df/2, 1/2) with z = df / (df + x^2).
    z = df / (df + x * x)
    half_two_sided = 0.5 * regularized_beta(df / 2.0, 0.5, z)
    return half_two_sided if x > 0.0 else 1.0 - half_two_sided


def f_sf(x: float, df1: float, df2: float) -> float:
    """Survival function P(F > x) of the F distribution.

    Both degrees of freedom may be real-valued, as produced by the
    Satterthwaite approximation for the denominator.
    """
    if df1 <= 0.0 or df2 <= 0.0:
        raise ValueError(f"degrees of freedom must be positive, got df1={df1}, df2={df2}")
    if not math.isfinite(x):
        if math.isnan(x):
            raise ValueError("quantile is NaN")
        return 0.0 if x > 0 else 1.0
    if x <= 0.0:
        return 1.0
    z = df2 / (df2 + df1 * x)
    return regularized_beta(df2 / 2.0, df1 / 2.0, z)
