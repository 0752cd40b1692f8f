"""Regularized incomplete beta function and its inverse in ``x``."""

from __future__ import annotations

import math

_TINY = 1e-300
_EPS = 1e-16
MAX_ITER = 10_000


class ConvergenceError(ArithmeticError):
    pass


def _log_beta(a: float, b: float) -> float:
    return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)


def _betacf(x: float, a: float, b: float) -> float:
    # Modified Lentz evaluation of the continued fraction for I_x(a, b).
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ConvergenceError(f"continued fraction did not converge for x={x}, a={a}, b={b}")


def betainc(x: float, a: float, b: float) -> float:
    """Regularized incomplete beta ``I_x(a, b)`` for ``a, b > 0``."""
    if a <= 0 or b <= 0:
        raise ValueError("shape parameters must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = a * math.log(x) + b * math.log1p(-x) - _log_beta(a, b)
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(x, a, b) / a
    return 1.0 - front * _betacf(1.0 - x, b, a) / b


def beta_pdf(x: float, a: float, b: float) -> float:
    if x <= 0.0 or x >= 1.0:
        return 0.0
    return math.exp((a - 1.0) * math.log(x) + (b - 1.0) * math.log1p(-x) - _log_beta(a, b))


def inverse_beta_cdf(p: float, a: float, b: float, tol: float = 1e-13, max_iter: int = 500) -> float:
    """Solve ``I_x(a, b) = p`` for ``x`` in ``[0, 1]``.

    Newton steps on the CDF, falling back to bisection whenever a step
    would leave the current bracket.
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    if a <= 0 or b <= 0:
        raise ValueError("shape parameters must be positive")
    lo, hi = 0.0, 1.0
    # start at the mean, a reasonable point for every shape
    x = a / (a + b)
    for _ in range(max_iter):
        f = betainc(x, a, b) - p
        if abs(f) <= tol:
            return x
        if f > 0:
            hi = x
        else:
            lo = x
        if hi - lo <= 4 * _EPS * max(x, _TINY):
            return x
        dens = beta_pdf(x, a, b)
        step_ok = False
        if dens > 0:
            x_new = x - f / dens
            if lo < x_new < hi:
                step_ok = True
        if not step_ok:
            x_new = 0.5 * (lo + hi)
        x = x_new
    raise ConvergenceError(f"inverse beta did not converge for p={p}, a={a}, b={b}")
