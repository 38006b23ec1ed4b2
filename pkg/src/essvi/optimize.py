"""Derivative-free bounded scalar minimization (Brent's localmin)."""

from __future__ import annotations

import math
from typing import Callable, NamedTuple

_GOLDEN = 0.5 * (3.0 - math.sqrt(5.0))
_SQRT_EPS = math.sqrt(2.2e-16)


class ScalarMinimum(NamedTuple):
    x: float
    fun: float
    nfev: int


def brent_minimize(
    func: Callable[[float], float],
    lo: float,
    hi: float,
    xtol: float = 1e-8,
    maxiter: int = 500,
) -> ScalarMinimum:
    """Minimize ``func`` on ``[lo, hi]`` by golden-section search with parabolic steps.

    Converges to a local minimum in the interior, or to within ``xtol`` of an end
    point when the minimum sits on the boundary. Endpoints themselves are never
    evaluated.
    """
    if lo > hi:
        raise ValueError("lower bound exceeds upper bound")
    if lo == hi:
        return ScalarMinimum(lo, func(lo), 1)
    a, b = lo, hi
    x = w = v = a + _GOLDEN * (b - a)
    fx = fw = fv = func(x)
    nfev = 1
    d = e = 0.0
    for _ in range(maxiter):
        xm = 0.5 * (a + b)
        tol1 = _SQRT_EPS * abs(x) + xtol / 3.0
        tol2 = 2.0 * tol1
        if abs(x - xm) <= tol2 - 0.5 * (b - a):
            break
        golden = True
        if abs(e) > tol1:
            # parabola through (v, fv), (w, fw), (x, fx)
            r = (x - w) * (fx - fv)
            q = (x - v) * (fx - fw)
            p = (x - v) * q - (x - w) * r
            q = 2.0 * (q - r)
            if q > 0.0:
                p = -p
            q = abs(q)
            r, e = e, d
            if abs(p) < abs(0.5 * q * r) and q * (a - x) < p < q * (b - x):
                d = p / q
                u = x + d
                if u - a < tol2 or b - u < tol2:
                    d = tol1 if x < xm else -tol1
                golden = False
        if golden:
            e = (b - x) if x < xm else (a - x)
            d = _GOLDEN * e
        u = x + (d if abs(d) >= tol1 else math.copysign(tol1, d))
        fu = func(u)
        nfev += 1
        if fu <= fx:
            if u >= x:
                a = x
            else:
                b = x
            v, fv, w, fw, x, fx = w, fw, x, fx, u, fu
        else:
            if u < x:
                a = u
            else:
                b = u
            if fu <= fw or w == x:
                v, fv, w, fw = w, fw, u, fu
            elif fu <= fv or v == x or v == w:
                v, fv = u, fu
    return ScalarMinimum(x, fx, nfev)
