"""Black pricing on forwards and implied volatility inversion.

Prices are expressed through the normalized Black function

    b(x, s) = eta * (exp(x/2) N(eta (x/s + s/2)) - exp(-x/2) N(eta (x/s - s/2)))

with ``x = ln(F/K)``, ``s = sigma sqrt(T)`` and ``eta = +1`` for calls, so that
``price = DF * sqrt(F K) * b``. Inversion always works on the out-of-the-money
counterpart of the quote (its time value) and runs a bracketed Newton iteration
on ``ln b``, which stays well conditioned deep in the wings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from essvi.errors import ImpliedVolError

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_SQRT_HALF = math.sqrt(0.5)
DF_MAX = 1.05


@dataclass(frozen=True)
class PricingInput:
    F: float
    K: float
    T: float
    sigma: float
    DF: float = 1.0
    is_call: bool = True

    def __post_init__(self) -> None:
        if not (self.F > 0 and self.K > 0):
            raise ValueError("forward and strike must be positive")
        if not self.T > 0:
            raise ValueError("time to expiry must be positive")
        if not self.sigma >= 0:
            raise ValueError("volatility must be non-negative")
        if not (0 < self.DF <= DF_MAX):
            raise ValueError(f"discount factor must lie in (0, {DF_MAX}]")


def _norm_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z * _SQRT_HALF)


def normalized_black(x, s, eta):
    """Vectorized normalized Black value; ``s = 0`` yields the normalized intrinsic."""
    x = np.asarray(x, dtype=float)
    s = np.asarray(s, dtype=float)
    eta = np.asarray(eta, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        xs = x / s
        half = 0.5 * s
        hx = 0.5 * x
        value = eta * (np.exp(hx) * ndtr(eta * (xs + half)) - np.exp(-hx) * ndtr(eta * (xs - half)))
    intrinsic = np.maximum(eta * (np.exp(0.5 * x) - np.exp(-0.5 * x)), 0.0)
    return np.where(s > 0, np.maximum(value, intrinsic), intrinsic)


def _normalized_black_scalar(x: float, s: float, eta: float) -> float:
    if s <= 0.0:
        return max(eta * (math.exp(0.5 * x) - math.exp(-0.5 * x)), 0.0)
    xs = x / s
    return eta * (
        math.exp(0.5 * x) * _norm_cdf(eta * (xs + 0.5 * s))
        - math.exp(-0.5 * x) * _norm_cdf(eta * (xs - 0.5 * s))
    )


def _normalized_vega(x: float, s: float) -> float:
    # d b / d s, identical for calls and puts
    return _INV_SQRT_2PI * math.exp(-0.5 * (x / s) ** 2 - 0.125 * s * s)


def black_price(F, K, T, sigma, DF=1.0, is_call=True):
    """Discounted Black price; broadcasts over array arguments."""
    F = np.asarray(F, dtype=float)
    K = np.asarray(K, dtype=float)
    eta = np.where(np.asarray(is_call, dtype=bool), 1.0, -1.0)
    s = np.asarray(sigma, dtype=float) * np.sqrt(np.asarray(T, dtype=float))
    value = np.asarray(DF, dtype=float) * np.sqrt(F * K) * normalized_black(np.log(F / K), s, eta)
    return value if value.ndim else float(value)


def bs_price(inp: PricingInput) -> float:
    """Discounted Black value of ``inp``; at zero volatility this is ``DF * intrinsic``."""
    x = math.log(inp.F / inp.K)
    s = inp.sigma * math.sqrt(inp.T)
    eta = 1.0 if inp.is_call else -1.0
    return inp.DF * math.sqrt(inp.F * inp.K) * _normalized_black_scalar(x, s, eta)


def _solve_total_std(beta: float, x: float, eta: float, max_iter: int = 200) -> float:
    """Find s > 0 with b(x, s, eta) = beta for an out-of-the-money (eta * x <= 0) quote."""
    log_beta = math.log(beta)
    lo, hi = 0.0, max(1.0, math.sqrt(2.0 * abs(x)))
    while _normalized_black_scalar(x, hi, eta) < beta:
        lo = hi
        hi *= 2.0
        if hi > 1e4:
            raise ImpliedVolError("price too close to its upper no-arbitrage bound")
    # sqrt(2|x|) maximizes vega; it is a decent start for Newton on ln b
    s = min(max(math.sqrt(2.0 * abs(x)), 0.5 * (lo + hi)), hi) if x else beta / _INV_SQRT_2PI
    s = min(max(s, lo), hi)
    for _ in range(max_iter):
        if s <= lo or s >= hi:
            s = 0.5 * (lo + hi)
        b = _normalized_black_scalar(x, s, eta)
        if b <= 0.0:
            lo = s
            s = 0.5 * (lo + hi)
            continue
        f = math.log(b) - log_beta
        if f > 0.0:
            hi = s
        else:
            lo = s
        if abs(b - beta) <= 1e-15 * beta:
            return s
        vega = _normalized_vega(x, s)
        step = f * b / vega if vega > 0.0 else math.inf
        s_new = s - step
        if not (lo < s_new < hi):
            s_new = 0.5 * (lo + hi)
        if abs(s_new - s) <= 1e-16 * s:
            return s_new
        s = s_new
        if hi - lo <= 4e-16 * hi:
            return s
    return s


def implied_vol(price: float, F: float, K: float, T: float, DF: float = 1.0, is_call: bool = True) -> float:
    """Black implied volatility of a discounted option price.

    Raises ``ImpliedVolError`` when ``price`` is not strictly inside
    ``(DF * intrinsic, DF * F)`` for calls or ``(DF * intrinsic, DF * K)`` for puts.
    """
    if not (F > 0 and K > 0 and T > 0):
        raise ValueError("forward, strike and time to expiry must be positive")
    if not (0 < DF <= DF_MAX):
        raise ValueError(f"discount factor must lie in (0, {DF_MAX}]")
    eta = 1.0 if is_call else -1.0
    intrinsic = DF * max(eta * (F - K), 0.0)
    upper = DF * (F if is_call else K)
    if not (intrinsic < price < upper) or not math.isfinite(price):
        raise ImpliedVolError(
            f"price {price!r} outside no-arbitrage band ({intrinsic!r}, {upper!r}) "
            f"for {'call' if is_call else 'put'} K={K!r}"
        )
    # time value of the quote equals the price of the out-of-the-money counterpart
    time_value = price - intrinsic
    x = math.log(F / K)
    otm_eta = 1.0 if x <= 0.0 else -1.0
    beta = time_value / (DF * math.sqrt(F * K))
    if beta <= 0.0:
        raise ImpliedVolError("time value underflows to zero")
    s = _solve_total_std(beta, x, otm_eta)
    return s / math.sqrt(T)
