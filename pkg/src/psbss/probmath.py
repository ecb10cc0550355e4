"""Scalar probability primitives: Gaussian tail, its inverse, binomial tails, dB."""

from __future__ import annotations

import math

from scipy.special import erfc, erfcinv

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class DomainError(ValueError):
    """Argument outside the mathematical domain of a function."""


def q_function(x: float) -> float:
    """Standard Gaussian tail probability ``Q(x) = P(N(0,1) > x)``.

    Evaluated as ``erfc(x/sqrt(2))/2`` so the upper tail keeps full relative
    precision (no ``1 - Phi`` cancellation).
    """
    x = float(x)
    if not math.isfinite(x):
        raise DomainError(f"q_function needs a finite argument, got {x!r}")
    return 0.5 * float(erfc(x / _SQRT2))


def q_inverse(p: float, tol: float = 1e-12, max_iter: int = 60) -> float:
    """Inverse of :func:`q_function` on (0, 1).

    Safeguarded Newton iteration inside a shrinking bracket; the ``erfcinv``
    value only seeds the iteration.
    """
    p = float(p)
    if not (0.0 < p < 1.0):
        raise DomainError(f"q_inverse needs 0 < p < 1, got {p!r}")
    if p == 0.5:
        return 0.0
    lo, hi = -40.0, 40.0
    x = _SQRT2 * float(erfcinv(2.0 * p))
    if not math.isfinite(x):
        x = 0.0
    for _ in range(max_iter):
        f = q_function(x) - p
        # Q is decreasing: f > 0 means the root lies to the right
        if f > 0.0:
            lo = max(lo, x)
        else:
            hi = min(hi, x)
        slope = -_INV_SQRT_2PI * math.exp(-0.5 * x * x)
        x_new = x - f / slope if slope != 0.0 else 0.5 * (lo + hi)
        if not (lo < x_new < hi):
            x_new = 0.5 * (lo + hi)
        if abs(x_new - x) <= tol * max(1.0, abs(x)):
            return x_new
        x = x_new
    return x


def binomial_tail(n: int, k: int, p: float) -> float:
    """``sum_{i=k}^{n} C(n,i) p^i (1-p)^(n-i)``; zero when ``k > n``."""
    if n < 1 or int(n) != n:
        raise DomainError(f"n must be a positive integer, got {n!r}")
    if not (0.0 <= p <= 1.0):
        raise DomainError(f"p must lie in [0, 1], got {p!r}")
    n, k = int(n), int(k)
    k = max(k, 0)
    if k > n:
        return 0.0
    if k == 0:
        return 1.0
    q = 1.0 - p
    total = math.fsum(math.comb(n, i) * p**i * q ** (n - i) for i in range(k, n + 1))
    return min(1.0, total)


def db_to_linear(x_db: float) -> float:
    return 10.0 ** (float(x_db) / 10.0)


def linear_to_db(x: float) -> float:
    if x <= 0:
        raise DomainError(f"linear_to_db needs a positive value, got {x!r}")
    return 10.0 * math.log10(x)


def dbm_to_mw(x_dbm: float) -> float:
    """Power in dBm to milliwatts (the package-wide power unit)."""
    return db_to_linear(x_dbm)
