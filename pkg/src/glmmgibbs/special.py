"""Gamma-function ratios that stay accurate for very large shapes."""

import math

import numpy as np
from scipy.special import gammaln

_STIRLING_MIN = 10.0
# coefficients of the Stirling correction  ln Γ(x) - [(x-½)ln x - x + ½ln 2π]
_STIRLING = (1 / 12, -1 / 360, 1 / 1260, -1 / 1680, 1 / 1188)


def _stirling_correction(x):
    x2 = 1.0 / (x * x)
    acc = 0.0
    for coef in reversed(_STIRLING):
        acc = acc * x2 + coef
    return acc / x


def log_gamma_ratio(x, delta):
    """``ln Γ(x + delta) - ln Γ(x)`` for ``x > 0`` and ``x + delta > 0``.

    For large ``x`` the two log-gammas are each ~``x ln x`` and their plain
    difference loses most of its digits; there the leading Stirling terms are
    differenced analytically instead.
    """
    x = float(x)
    delta = float(delta)
    if x <= 0 or x + delta <= 0:
        raise ValueError(f"log_gamma_ratio needs x > 0 and x + delta > 0, got ({x}, {delta})")
    if delta == 0:
        return 0.0
    if min(x, x + delta) < _STIRLING_MIN:
        return float(gammaln(x + delta) - gammaln(x))
    y = x + delta
    main = (x - 0.5) * math.log1p(delta / x) + delta * math.log(y) - delta
    return main + _stirling_correction(y) - _stirling_correction(x)


def gamma_ratio(x, delta):
    """``Γ(x + delta) / Γ(x)``."""
    return math.exp(log_gamma_ratio(x, delta))


def gamma_ratio_vec(x, delta):
    return np.array([gamma_ratio(xi, delta) for xi in np.atleast_1d(x)])
