"""Independent reference computations used only by the tests.

Each one is written directly from its definition and shares no code with the
package paths it checks.
"""

import mpmath as mp


def chi2_survival_quadrature(x, dof, dps=40):
    """Pr(chi2_dof > x) by adaptive quadrature of the density.

    Integrates in u = sqrt(t), which removes the t^(-1/2) singularity of
    the one-degree-of-freedom density at the origin.
    """
    with mp.workdps(dps):
        k = mp.mpf(dof)
        norm = 2 ** (k / 2) * mp.gamma(k / 2)

        def integrand(u):
            t = u * u
            return 2 * u * t ** (k / 2 - 1) * mp.e ** (-t / 2) / norm

        lo = mp.sqrt(mp.mpf(x))
        return float(mp.quad(integrand, [lo, lo + 5, lo + 20, mp.inf]))


def x2_direct(ns, ps):
    """X^2 straight from its formula, with cells given as (N_i, p_i) lists."""
    live = [(n, p) for n, p in zip(ns, ps) if n > 0]
    total = sum(n for n, _ in live)
    pooled = sum(p * n for n, p in live) / total
    if pooled in (0.0, 1.0):
        return 0.0
    return sum((p - pooled) ** 2 * n for n, p in live) / (pooled * (1 - pooled))


def scan_count(rows, pattern):
    """Linear scan: rows are dicts with None for unobserved attributes."""
    return sum(
        1 for r in rows if all(r.get(a) is not None and r[a] == v for a, v in pattern.items())
    )


def scan_joint(rows, target, condition):
    needed = {**target, **condition}
    n = s = 0
    for r in rows:
        if any(r.get(a) is None for a in needed):
            continue
        if all(r[a] == v for a, v in condition.items()):
            n += 1
            if all(r[a] == v for a, v in target.items()):
                s += 1
    return n, s
