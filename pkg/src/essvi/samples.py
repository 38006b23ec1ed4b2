"""Sample parameter sets and synthetic option chains priced from eSSVI slices."""

from __future__ import annotations

import csv
import datetime as dt
import math
from typing import Sequence, TextIO

import numpy as np

from essvi.black_scholes import black_price
from essvi.core import SliceParams, total_variance
from essvi.market_data import DAYS_PER_YEAR, DEFAULT_COLUMNS, OptionQuote, QuoteChain

# SPX, end of day 2018-01-08: (T, theta, psi, rho, ATM vol in %, phi) as published
SPX_20180108 = (
    (0.030137, 0.0001, 0.012, -0.224, 6.4, 96.33),
    (0.106849, 0.0006, 0.032, -0.453, 7.8, 50.22),
    (0.183562, 0.0014, 0.049, -0.495, 8.6, 35.82),
    (0.279452, 0.0025, 0.066, -0.578, 9.4, 26.66),
    (0.432877, 0.0049, 0.089, -0.610, 10.6, 18.38),
    (0.701370, 0.0100, 0.116, -0.672, 12.0, 11.55),
    (0.950685, 0.0158, 0.131, -0.704, 12.9, 8.28),
    (1.027397, 0.0174, 0.134, -0.704, 13.0, 7.73),
    (1.180822, 0.0215, 0.145, -0.725, 13.5, 6.75),
    (1.449315, 0.0292, 0.165, -0.725, 14.2, 5.68),
    (1.947945, 0.0444, 0.191, -0.746, 15.1, 4.29),
    (2.945205, 0.0750, 0.243, -0.724, 16.0, 3.24),
)
SPX_SPOT_20180108 = 2747.71


def spx_maturities() -> list[float]:
    return [row[0] for row in SPX_20180108]


def spx_params() -> list[SliceParams]:
    return [SliceParams(theta, rho, psi) for _, theta, psi, rho, _, _ in SPX_20180108]


def synthetic_chain(
    maturities: Sequence[float],
    params: Sequence[SliceParams],
    spot: float = 2700.0,
    rate: float = 0.02,
    dividend_yield: float = 0.015,
    k_range: tuple[float, float] = (-0.3, 0.3),
    n_strikes: int = 100,
    tick_size: float = 0.05,
    noise_ticks: float = 0.0,
    seed: int | None = None,
    round_to_tick: bool = False,
) -> QuoteChain:
    """Calls and puts on a log-moneyness grid priced from the given slices.

    With ``noise_ticks > 0`` every mid is shifted by a uniform draw in
    ``[-noise_ticks, noise_ticks]`` ticks. Quotes are zero-width (``bid == ask``).
    Quotes whose price is not positive are omitted.
    """
    rng = np.random.default_rng(seed)
    quotes = []
    k = np.linspace(k_range[0], k_range[1], n_strikes)
    for T, p in zip(maturities, params):
        F = spot * math.exp((rate - dividend_yield) * T)
        DF = math.exp(-rate * T)
        K = F * np.exp(k)
        sigma = np.sqrt(total_variance(k, p) / T)
        for is_call in (True, False):
            prices = black_price(F, K, T, sigma, DF, is_call)
            if noise_ticks:
                prices = prices + rng.uniform(-noise_ticks, noise_ticks, size=prices.shape) * tick_size
            if round_to_tick:
                prices = np.round(prices / tick_size) * tick_size
            for strike, price in zip(K, prices):
                if price > 0:
                    quotes.append(OptionQuote(float(strike), T, is_call, float(price), float(price)))
    return QuoteChain(spot, None, tuple(quotes), tick_size)


def spx_days() -> list[int]:
    """Calendar days to each sample expiry (the published maturities are ACT/365)."""
    return [round(T * 365) for T in spx_maturities()]


def write_chain_csv(chain: QuoteChain, stream: TextIO, valuation_date: dt.date) -> None:
    """Write ``chain`` in the default column layout, expiries rounded to whole days."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(
        [DEFAULT_COLUMNS[c] for c in ("quote_date", "expiry", "strike", "option_type", "bid", "ask", "spot")]
    )
    for q in chain.quotes:
        expiry = valuation_date + dt.timedelta(days=round(q.expiry_time * DAYS_PER_YEAR))
        writer.writerow(
            [
                valuation_date.isoformat(),
                expiry.isoformat(),
                repr(q.strike),
                "C" if q.is_call else "P",
                repr(q.bid),
                repr(q.ask),
                repr(chain.spot),
            ]
        )
