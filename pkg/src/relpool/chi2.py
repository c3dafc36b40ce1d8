"""Chi-square tail probabilities and critical values.

The upper tail of a chi-square variable with ``dof`` degrees of freedom is the
regularized upper incomplete gamma function ``Q(dof/2, x/2)``.  ``Q`` is
evaluated by the power series for ``P = 1 - Q`` when ``x < a + 1`` and by a
modified-Lentz continued fraction otherwise; each converges quickly on its side
of that boundary.
"""

from __future__ import annotations

import math
from functools import lru_cache

# relative convergence tolerance for series / continued fraction terms
EPS = 1e-16
# guards Lentz's algorithm against division by zero
TINY = 1e-300
MAX_ITER = 10_000


def _series_p(a: float, x: float) -> float:
    """Lower regularized gamma P(a, x) by its power series (x < a + 1)."""
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * EPS:
            break
    else:
        raise ArithmeticError(f"gamma series failed to converge (a={a}, x={x})")
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _continued_fraction_q(a: float, x: float) -> float:
    """Upper regularized gamma Q(a, x) by continued fraction (x >= a + 1)."""
    b = x + 1.0 - a
    c = 1.0 / TINY
    d = 1.0 / b
    h = d
    for i in range(1, MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < TINY:
            d = TINY
        c = b + an / c
        if abs(c) < TINY:
            c = TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < EPS:
            break
    else:
        raise ArithmeticError(f"gamma continued fraction failed to converge (a={a}, x={x})")
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def regularized_gamma_q(a: float, x: float) -> float:
    """Q(a, x) = Gamma(a, x) / Gamma(a) for a > 0, x >= 0."""
    if a <= 0:
        raise ValueError("a must be positive")
    if x < 0:
        raise ValueError("x must be nonnegative")
    if x == 0:
        return 1.0
    if x < a + 1.0:
        return max(0.0, 1.0 - _series_p(a, x))
    return _continued_fraction_q(a, x)


def chi_square_survival(x: float, dof: int) -> float:
    """Pr(chi2_dof > x)."""
    if dof < 1 or int(dof) != dof:
        raise ValueError("dof must be a positive integer")
    if x < 0 or math.isnan(x):
        raise ValueError("x must be nonnegative")
    if math.isinf(x):
        return 0.0
    return regularized_gamma_q(dof / 2.0, x / 2.0)


def chi_square_pdf(x: float, dof: int) -> float:
    if x <= 0:
        return 0.0
    k = dof / 2.0
    return math.exp((k - 1.0) * math.log(x) - x / 2.0 - k * math.log(2.0) - math.lgamma(k))


@lru_cache(maxsize=4096)
def chi_square_critical(alpha: float, dof: int) -> float:
    """Value ``c`` with ``chi_square_survival(c, dof) == alpha``.

    Bisection brackets the root to a relative width of 1e-3, then Newton steps
    on ``log Q(c) - log alpha`` polish it; working in log space keeps the
    answer accurate in relative terms for very small alpha.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if dof < 1 or int(dof) != dof:
        raise ValueError("dof must be a positive integer")
    dof = int(dof)
    lo, hi = 0.0, max(1.0, float(dof))
    while chi_square_survival(hi, dof) > alpha:
        lo, hi = hi, hi * 2.0
    while hi - lo > 1e-3 * hi:
        mid = 0.5 * (lo + hi)
        if chi_square_survival(mid, dof) > alpha:
            lo = mid
        else:
            hi = mid
    c = 0.5 * (lo + hi)
    log_alpha = math.log(alpha)
    for _ in range(50):
        q = chi_square_survival(c, dof)
        if q <= 0.0:
            break
        f = math.log(q) - log_alpha
        fprime = -chi_square_pdf(c, dof) / q
        if fprime == 0.0:
            break
        if f > 0:
            lo = max(lo, c)
        else:
            hi = min(hi, c)
        nxt = c - f / fprime
        if not lo <= nxt <= hi:
            nxt = 0.5 * (lo + hi)
        if abs(nxt - c) <= 1e-15 * max(1.0, c):
            c = nxt
            break
        c = nxt
    return c
