"""Option chain ingestion: CSV parsing, forward/discount inference, OTM slice assembly."""

from __future__ import annotations

import csv
import datetime as dt
import io
import logging
import math
import os
from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from typing import BinaryIO, Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import siegelslopes

from essvi.black_scholes import DF_MAX, implied_vol
from essvi.core import Anchor
from essvi.errors import ChainParseError, ForwardInferenceError, ImpliedVolError, SliceBuildError

logger = logging.getLogger(__name__)

DAYS_PER_YEAR = 365.0
HUBER_C = 1.345
# MAD -> standard deviation under normal errors
MAD_TO_SIGMA = 1.0 / 0.6744897501960817

# column names of CBOE end-of-day option quote exports
DEFAULT_COLUMNS = {
    "expiry": "expiration",
    "strike": "strike",
    "option_type": "option_type",
    "bid": "bid_1545",
    "ask": "ask_1545",
    "quote_date": "quote_date",
    "spot": "active_underlying_price_1545",
}
REQUIRED_COLUMNS = ("expiry", "strike", "option_type", "bid", "ask")


@dataclass(frozen=True)
class OptionQuote:
    strike: float
    expiry_time: float
    is_call: bool
    bid: float
    ask: float
    expiry: dt.date | None = None

    def __post_init__(self) -> None:
        if not (self.bid >= 0 and self.ask >= self.bid):
            raise ValueError(f"invalid quote bid={self.bid!r} ask={self.ask!r}")
        if not (self.strike > 0 and self.expiry_time > 0):
            raise ValueError("strike and expiry time must be positive")

    @property
    def mid(self) -> float:
        return 0.5 * (self.bid + self.ask)


@dataclass(frozen=True)
class RejectedRow:
    reason: str
    line: int | None = None
    expiry: str | None = None
    strike: float | None = None

    def as_record(self) -> dict:
        return {"reason": self.reason, "line": self.line, "expiry": self.expiry, "strike": self.strike}


@dataclass(frozen=True)
class QuoteChain:
    spot: float | None
    valuation_date: dt.date | None
    quotes: tuple[OptionQuote, ...]
    tick_size: float = 0.05
    rejected: tuple[RejectedRow, ...] = ()

    def by_expiry(self) -> dict[float, list[OptionQuote]]:
        groups: dict[float, list[OptionQuote]] = defaultdict(list)
        for q in self.quotes:
            groups[q.expiry_time].append(q)
        return dict(sorted(groups.items()))


@dataclass(frozen=True)
class ChainFormat:
    """How to read a chain CSV.

    ``columns`` maps logical fields (``expiry``, ``strike``, ``option_type``, ``bid``,
    ``ask`` and optionally ``quote_date``, ``spot``) to header names. ``expiry_format``
    is ``"date"`` (parsed with ``date_format``, year fraction ACT/365 from the
    valuation date) or ``"year_fraction"``. ``valuation_date`` and ``spot`` given here
    take precedence over the corresponding columns.
    """

    columns: Mapping[str, str] = field(default_factory=lambda: dict(DEFAULT_COLUMNS))
    expiry_format: str = "date"
    date_format: str = "%Y-%m-%d"
    valuation_date: dt.date | None = None
    spot: float | None = None
    tick_size: float = 0.05
    delimiter: str = ","

    @classmethod
    def from_mapping(cls, cfg: Mapping) -> "ChainFormat":
        cfg = dict(cfg)
        columns = dict(DEFAULT_COLUMNS)
        columns.update(cfg.pop("columns", {}) or {})
        vd = cfg.pop("valuation_date", None)
        if isinstance(vd, str):
            vd = dt.date.fromisoformat(vd)
        unknown = set(cfg) - {"expiry_format", "date_format", "spot", "tick_size", "delimiter"}
        if unknown:
            raise ValueError(f"unknown market config keys: {sorted(unknown)}")
        return cls(columns=columns, valuation_date=vd, **cfg)


def _parse_flag(text: str) -> bool:
    t = text.strip().lower()
    if t in ("c", "call", "calls"):
        return True
    if t in ("p", "put", "puts"):
        return False
    raise ValueError(f"unrecognized option type {text!r}")


def _read_text(source) -> str:
    if isinstance(source, (bytes, bytearray)):
        data = bytes(source)
    elif isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            data = fh.read()
    else:
        data = source.read()
        if isinstance(data, str):
            return data
    return data.decode("utf-8-sig")


def parse_chain(source: bytes | str | os.PathLike | BinaryIO, fmt: ChainFormat | None = None) -> QuoteChain:
    """Read an option chain CSV.

    Rows with ``bid > 0`` and ``ask >= bid`` are kept. Every other row is recorded in
    ``QuoteChain.rejected`` with its line number and logged as a warning.
    """
    fmt = fmt or ChainFormat()
    try:
        text = _read_text(source)
    except (OSError, UnicodeDecodeError) as exc:
        raise ChainParseError(f"cannot read option chain: {exc}") from exc
    reader = csv.DictReader(io.StringIO(text), delimiter=fmt.delimiter)
    header = reader.fieldnames or []
    if not header:
        raise ChainParseError("zero valid rows: empty option chain")
    cols = fmt.columns
    missing = [name for name in REQUIRED_COLUMNS if cols.get(name) not in header]
    if missing:
        raise ChainParseError(f"missing required column(s): {', '.join(cols.get(m, m) for m in missing)}")
    if fmt.expiry_format not in ("date", "year_fraction"):
        raise ChainParseError(f"unknown expiry_format {fmt.expiry_format!r}")

    valuation_date = fmt.valuation_date
    qd_col = cols.get("quote_date")
    spot = fmt.spot
    spot_col = cols.get("spot")
    rows = list(reader)
    if not rows:
        raise ChainParseError("zero valid rows: option chain has a header only")
    if valuation_date is None and fmt.expiry_format == "date":
        if qd_col not in header:
            raise ChainParseError("valuation date missing: set it in the config or supply a quote date column")
        dates = {r[qd_col].strip() for r in rows if r.get(qd_col)}
        if len(dates) != 1:
            raise ChainParseError(f"expected a single quote date, found {sorted(dates)}")
        valuation_date = dt.datetime.strptime(dates.pop(), fmt.date_format).date()
    if spot is None and spot_col in header:
        values = [float(r[spot_col]) for r in rows if r.get(spot_col)]
        spot = float(np.median(values)) if values else None

    quotes: list[OptionQuote] = []
    rejected: list[RejectedRow] = []
    for lineno, row in enumerate(rows, start=2):
        raw_expiry = (row.get(cols["expiry"]) or "").strip()
        try:
            strike = float(row[cols["strike"]])
            is_call = _parse_flag(row[cols["option_type"]])
            bid = float(row[cols["bid"]])
            ask = float(row[cols["ask"]])
            if fmt.expiry_format == "date":
                expiry = dt.datetime.strptime(raw_expiry, fmt.date_format).date()
                expiry_time = (expiry - valuation_date).days / DAYS_PER_YEAR
            else:
                expiry, expiry_time = None, float(raw_expiry)
        except (TypeError, ValueError, KeyError) as exc:
            rejected.append(RejectedRow(f"malformed row: {exc}", lineno, raw_expiry or None))
            continue
        reason = None
        if not all(math.isfinite(v) for v in (strike, bid, ask, expiry_time)):
            reason = "non-finite value"
        elif strike <= 0:
            reason = "non-positive strike"
        elif expiry_time <= 0:
            reason = "expired or same-day option"
        elif bid <= 0:
            reason = "non-positive bid"
        elif ask < bid:
            reason = "crossed quote (ask < bid)"
        if reason:
            rejected.append(RejectedRow(reason, lineno, raw_expiry, strike))
            continue
        quotes.append(OptionQuote(strike, expiry_time, is_call, bid, ask, expiry))

    for r in rejected:
        logger.warning("dropped row %s: %s", r.line, r.reason, extra=r.as_record())
    if not quotes:
        raise ChainParseError("zero valid rows in option chain")
    return QuoteChain(spot, valuation_date, tuple(quotes), fmt.tick_size, tuple(rejected))


def _huber_irls(x: np.ndarray, y: np.ndarray, max_iter: int = 20) -> tuple[float, float]:
    """Huber M-estimate of ``y = a + b x`` by iteratively reweighted least squares."""
    xc = x.mean()
    X = np.column_stack([np.ones_like(x), x - xc])
    # repeated-median start; OLS dragged by outliers needs more than max_iter sweeps
    slope, intercept = siegelslopes(y, X[:, 1])
    coef = np.array([intercept, slope])
    # a zero MAD (exact fit by the majority) must not zero the threshold
    floor = 1e-13 * max(1.0, float(np.abs(y).max()))
    for _ in range(max_iter):
        resid = y - X @ coef
        absr = np.abs(resid)
        scale = max(float(np.median(absr)) * MAD_TO_SIGMA, floor)
        delta = HUBER_C * scale
        weights = np.where(absr <= delta, 1.0, delta / np.maximum(absr, delta))
        sw = np.sqrt(weights)
        new = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)[0]
        done = np.all(np.abs(new - coef) <= 1e-15 * (1.0 + np.abs(coef)))
        coef = new
        if done:
            break
    a_c, b = coef
    return float(a_c - b * xc), float(b)


def infer_forward_discount(quotes: Iterable[OptionQuote]) -> tuple[float, float]:
    """Forward and discount factor from put-call parity on mid prices.

    Regresses ``C - P = DF*F - DF*K`` over strikes quoted on both sides with a
    Huber-weighted fit, so a minority of bad quotes does not move the line.
    """
    calls: dict[float, float] = {}
    puts: dict[float, float] = {}
    for q in quotes:
        (calls if q.is_call else puts)[q.strike] = q.mid
    strikes = sorted(set(calls) & set(puts))
    if len(strikes) < 2:
        raise ForwardInferenceError(f"need at least 2 strikes with both a call and a put, got {len(strikes)}")
    K = np.array(strikes)
    y = np.array([calls[s] - puts[s] for s in strikes])
    a, b = _huber_irls(K, y)
    DF = -b
    if not (0.0 < DF <= DF_MAX):
        raise ForwardInferenceError(f"implausible discount factor {DF!r} from put-call parity")
    F = a / DF
    if not F > 0:
        raise ForwardInferenceError(f"implausible forward {F!r} from put-call parity")
    return F, DF


@dataclass(frozen=True)
class SlicePoint:
    k: float
    strike: float
    mid: float
    bid: float
    ask: float
    is_call: bool
    market_iv: float = math.nan


@dataclass(frozen=True)
class MaturitySlice:
    T: float
    forward: float
    discount: float
    points: tuple[SlicePoint, ...]
    anchor_k: float
    anchor_theta: float
    expiry: dt.date | None = None

    @property
    def anchor(self) -> Anchor:
        return Anchor(self.anchor_k, self.anchor_theta)

    @cached_property
    def arrays(self) -> dict[str, np.ndarray]:
        pts = self.points
        return {
            "k": np.array([p.k for p in pts]),
            "strike": np.array([p.strike for p in pts]),
            "mid": np.array([p.mid for p in pts]),
            "bid": np.array([p.bid for p in pts]),
            "ask": np.array([p.ask for p in pts]),
            "is_call": np.array([p.is_call for p in pts], dtype=bool),
            "market_iv": np.array([p.market_iv for p in pts]),
        }

    def label(self) -> str:
        return self.expiry.isoformat() if self.expiry else f"T={self.T:.6g}"


def make_slice(
    T: float,
    forward: float,
    discount: float,
    points: Sequence[SlicePoint],
    expiry: dt.date | None = None,
) -> MaturitySlice:
    """Sort points, attach market vols and pick the anchor closest to the money."""
    if not points:
        raise SliceBuildError(f"no surviving quotes at T={T:.6g}")
    with_iv = []
    for p in sorted(points, key=lambda p: (p.k, not p.is_call)):
        try:
            iv = implied_vol(p.mid, forward, p.strike, T, discount, p.is_call)
        except ImpliedVolError:
            iv = math.nan
        with_iv.append(SlicePoint(p.k, p.strike, p.mid, p.bid, p.ask, p.is_call, iv))
    # ties in |k| go to the call
    anchor = min(with_iv, key=lambda p: (abs(p.k), not p.is_call))
    if not math.isfinite(anchor.market_iv):
        raise SliceBuildError(f"anchor quote at K={anchor.strike!r}, T={T:.6g} has no implied volatility")
    theta_star = anchor.market_iv**2 * T
    return MaturitySlice(T, forward, discount, tuple(with_iv), anchor.k, theta_star, expiry)


def build_maturity_slice(
    quotes: Iterable[OptionQuote],
    forward: float,
    discount: float,
    tick_size: float = 0.05,
) -> MaturitySlice:
    """OTM quotes at one expiry with mids of at least two ticks, in log-forward moneyness.

    Calls are kept for ``K >= F`` and puts for ``K < F``.
    """
    quotes = list(quotes)
    if not quotes:
        raise SliceBuildError("no quotes supplied")
    T = quotes[0].expiry_time
    expiry = quotes[0].expiry
    label = expiry.isoformat() if expiry else f"T={T:.6g}"
    points = []
    for q in quotes:
        if q.is_call != (q.strike >= forward):
            continue
        if q.mid < 2.0 * tick_size:
            logger.warning(
                "dropped quote below two ticks",
                extra={"reason": "mid below two ticks", "expiry": label, "strike": q.strike},
            )
            continue
        points.append(SlicePoint(math.log(q.strike / forward), q.strike, q.mid, q.bid, q.ask, q.is_call))
    if not points:
        raise SliceBuildError(f"no OTM quotes of at least two ticks survive at expiry {label}")
    return make_slice(T, forward, discount, points, expiry)


def build_slices(chain: QuoteChain) -> list[MaturitySlice]:
    """Forward inference and slice assembly for every expiry, shortest first."""
    slices = []
    for T, quotes in chain.by_expiry().items():
        label = quotes[0].expiry.isoformat() if quotes[0].expiry else f"T={T:.6g}"
        try:
            F, DF = infer_forward_discount(quotes)
        except ForwardInferenceError as exc:
            raise ForwardInferenceError(f"expiry {label}: {exc}") from exc
        slices.append(build_maturity_slice(quotes, F, DF, chain.tick_size))
    return slices
