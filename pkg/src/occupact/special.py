"""Complementary error function and its inverse at one half.

The evaluator combines a positive-term Maclaurin series for small
arguments with a backward-evaluated continued fraction for large ones.
Both branches are free of cancellation, which keeps the relative error
below 1e-12 across |x| <= 6 (verified against a multi-precision oracle
in the test suite).
"""

from __future__ import annotations

import math

import numpy as np

SQRT_PI = 1.7724538509055160273

# Branch split and iteration depths; tuned so the worst relative error on
# |x| <= 6 stays near 1e-13 while keeping the vectorized cost low.
_SPLIT = 2.0
_SERIES_MAX = 100
_CF_DEPTH = 64


def _erf_series(a):
    """erf(a) for 0 <= a <= _SPLIT via the scaled Maclaurin series.

    erf(a) = (2/sqrt(pi)) e^{-a^2} sum_n a^{2n+1} 2^n / (1*3*...*(2n+1));
    all terms are positive, so there is no cancellation.
    """
    term = a.copy()
    acc = a.copy()
    a2 = 2.0 * a * a
    for n in range(1, _SERIES_MAX):
        term = term * (a2 / (2.0 * n + 1.0))
        acc += term
        if np.max(term) <= 1e-18:
            break
    return (2.0 / SQRT_PI) * np.exp(-a * a) * acc


def _erfc_cf(a):
    """erfc(a) for a > _SPLIT via the Laplace continued fraction.

    erfc(a) = e^{-a^2} / (sqrt(pi) * K) with
    K = a + (1/2)/(a + 1/(a + (3/2)/(a + 2/(a + ...)))),
    evaluated backward from a fixed depth (stable, branch-free).
    """
    f = a.copy()
    for k in range(_CF_DEPTH, 0, -1):
        f = a + (0.5 * k) / f
    with np.errstate(under="ignore"):
        return np.exp(-a * a) / (SQRT_PI * f)


def erfc(x):
    """Vectorized complementary error function.

    Parameters
    ----------
    x : array_like
        Real arguments (assumed finite).

    Returns
    -------
    ndarray
        erfc(x), elementwise in (0, 2); underflows to exactly 0 for very
        large arguments instead of producing NaN.
    """
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    out = np.empty_like(x)
    neg = x < 0
    a = np.abs(x)
    small = a <= _SPLIT
    if small.any():
        out[small] = 1.0 - _erf_series(a[small])
    big = ~small
    if big.any():
        out[big] = _erfc_cf(a[big])
    out[neg] = 2.0 - out[neg]
    return out[0] if scalar else out


def erfc_eval(x: float) -> float:
    """erfc at a single point, with domain checking.

    Raises
    ------
    ValueError
        If ``x`` is not finite.
    """
    if not math.isfinite(x):
        raise ValueError(f"erfc_eval requires a finite argument, got {x!r}")
    return float(erfc(x))


_ERFCINV_HALF: float | None = None


def erfcinv_half() -> float:
    """The solution of erfc(x) = 1/2, computed once by bisection.

    Bisection on [0.4, 0.6] to ~1e-16; erfc is strictly decreasing so the
    root is unique.
    """
    global _ERFCINV_HALF
    if _ERFCINV_HALF is None:
        lo, hi = 0.4, 0.6
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if erfc_eval(mid) > 0.5:
                lo = mid
            else:
                hi = mid
        _ERFCINV_HALF = 0.5 * (lo + hi)
    return _ERFCINV_HALF
