"""Privacy accounting: Gaussian-mechanism zCDP and (epsilon, delta) conversion.

The correlated-noise mechanism releases C x + z with z iid Gaussian of
standard deviation sigma * zeta and sens the clip-normalized sensitivity
of C, so it is exactly the Gaussian mechanism at multiplier
alpha = sigma / sens and satisfies rho-zCDP with rho = sens^2 / (2 sigma^2).

The conversion to (epsilon, delta) uses the standard zCDP tail bound.
Both forms here are upper bounds: the closed form
epsilon = rho + 2 sqrt(rho ln(1/delta)), and a refined minimization over
the Renyi order that is never larger. Numerically tighter accountants
(privacy loss distributions) give smaller epsilon for the same mechanism;
outputs are labeled accordingly.
"""

from __future__ import annotations

import math

from scipy.optimize import minimize_scalar

METHOD_LABEL = "upper bound (zCDP conversion)"

# delta for production-style accounting unless the caller says otherwise
DEFAULT_DELTA = 1e-10


def zcdp_of(sens: float, sigma: float) -> float:
    """rho = sens^2 / (2 sigma^2); sigma = 0 reports infinite rho explicitly."""
    if sens < 0:
        raise ValueError("sensitivity must be >= 0")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0.0:
        return math.inf
    return sens * sens / (2.0 * sigma * sigma)


def eps_of_zcdp(rho: float, delta: float = DEFAULT_DELTA, refined: bool = False) -> float:
    """epsilon such that rho-zCDP implies (epsilon, delta)-DP.

    Closed form: rho + 2 sqrt(rho ln(1/delta)). With ``refined=True`` the
    tail bound

        epsilon(a) = rho a + (log(1/delta) + (a-1) log(1 - 1/a) - log a) / (a - 1)

    is minimized over the order a > 1, which is never worse than the
    closed form. Both are upper bounds on the true epsilon.
    """
    if not (0.0 < delta < 1.0):
        raise ValueError("delta must lie in (0, 1)")
    if rho < 0:
        raise ValueError("rho must be >= 0")
    if rho == 0.0:
        return 0.0
    if math.isinf(rho):
        return math.inf
    log1d = math.log(1.0 / delta)
    closed = rho + 2.0 * math.sqrt(rho * log1d)
    if not refined:
        return closed

    def eps_at(a):
        return rho * a + (log1d + (a - 1.0) * math.log1p(-1.0 / a) - math.log(a)) / (
            a - 1.0
        )

    # the closed form is the unrefined bound's optimum at
    # a* = 1 + sqrt(log(1/delta)/rho); search around it
    a_star = 1.0 + math.sqrt(log1d / rho)
    res = minimize_scalar(
        eps_at, bounds=(1.0 + 1e-9, max(10.0 * a_star, 100.0)), method="bounded"
    )
    return float(min(closed, res.fun))
