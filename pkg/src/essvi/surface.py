"""Continuous eSSVI surface built from calibrated slices.

Between two maturities ``theta``, ``psi`` and ``rho*psi`` are linear in time; the
correlation is recovered as their ratio. Before the first maturity theta and psi
shrink linearly to zero at a constant correlation. After the last one theta grows
by a long-term rule while psi and rho stay frozen. All three regimes preserve the
no-arbitrage conditions satisfied by the knots.

Serialized form (``.essvi``)::

    ESSVI-SURFACE 1
    valuation_date <ISO date or ->
    spot <float or ->
    long_term_rule <name>
    T,F,DF,theta,rho,psi
    <one line per maturity, 17 significant digits>
"""

from __future__ import annotations

import datetime as dt
import math
import os
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from essvi.core import SliceParams, total_variance
from essvi.errors import SurfaceFormatError, SurfaceValidationError
from essvi.no_arb import check_conditions

MAGIC = "ESSVI-SURFACE"
FORMAT_VERSION = 1
FILE_EXTENSION = ".essvi"
COLUMNS = ("T", "F", "DF", "theta", "rho", "psi")


def _flat_atm_vol(t: np.ndarray, T_N: float, theta_N: float, buckets) -> np.ndarray:
    # theta_t / t stays at theta_N / T_N
    return theta_N * (t - T_N) / T_N


def _last_bucket_slope(t: np.ndarray, T_N: float, theta_N: float, buckets) -> np.ndarray:
    if buckets is None:
        return _flat_atm_vol(t, T_N, theta_N, None)
    (T_a, theta_a) = buckets
    return (theta_N - theta_a) / (T_N - T_a) * (t - T_N)


# continuous, increasing, zero at the last maturity
LONG_TERM_RULES: dict[str, Callable] = {
    "flat_atm_vol": _flat_atm_vol,
    "last_bucket_slope": _last_bucket_slope,
}


@dataclass(frozen=True)
class EssviSurface:
    maturities: tuple[float, ...]
    slices: tuple[SliceParams, ...]
    forwards: tuple[float, ...]
    discounts: tuple[float, ...]
    valuation_date: dt.date | None = None
    spot: float | None = None
    long_term_rule: str = "flat_atm_vol"

    def __post_init__(self) -> None:
        n = len(self.maturities)
        if n < 1:
            raise ValueError("a surface needs at least one slice")
        if not (len(self.slices) == len(self.forwards) == len(self.discounts) == n):
            raise ValueError("maturities, slices, forwards and discounts must have equal lengths")
        if self.maturities[0] <= 0 or any(b <= a for a, b in zip(self.maturities, self.maturities[1:])):
            raise ValueError("maturities must be positive and strictly increasing")
        if self.long_term_rule not in LONG_TERM_RULES:
            raise ValueError(f"unknown long-term rule {self.long_term_rule!r}")

    @classmethod
    def from_fits(cls, slices, fits, valuation_date=None, spot=None, long_term_rule="flat_atm_vol"):
        """Assemble from market slices and their calibrated fits."""
        return cls(
            tuple(s.T for s in slices),
            tuple(f.params for f in fits),
            tuple(s.forward for s in slices),
            tuple(s.discount for s in slices),
            valuation_date,
            spot,
            long_term_rule,
        )

    # -- parameters -------------------------------------------------------

    def param_arrays(self, t) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Vectorized ``(theta, rho, psi)`` at times ``t > 0``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(~(t > 0)):
            raise ValueError("time must be positive")
        T = np.array(self.maturities)
        th = np.array([p.theta for p in self.slices])
        ps = np.array([p.psi for p in self.slices])
        rp = np.array([p.rho_psi for p in self.slices])
        rh = np.array([p.rho for p in self.slices])
        n = len(T)
        theta = np.empty_like(t)
        psi = np.empty_like(t)
        rho = np.empty_like(t)

        short = t < T[0]
        lam = t[short] / T[0]
        theta[short] = lam * th[0]
        psi[short] = lam * ps[0]
        rho[short] = rh[0]

        long_ = t >= T[-1]
        rule = LONG_TERM_RULES[self.long_term_rule]
        last_bucket = (T[-2], th[-2]) if n > 1 else None
        theta[long_] = th[-1] + rule(t[long_], T[-1], th[-1], last_bucket)
        psi[long_] = ps[-1]
        rho[long_] = rh[-1]

        mid = ~short & ~long_
        if np.any(mid):
            tm = t[mid]
            i = np.searchsorted(T, tm, side="right") - 1
            lam = (tm - T[i]) / (T[i + 1] - T[i])
            theta[mid] = (1.0 - lam) * th[i] + lam * th[i + 1]
            psi_m = (1.0 - lam) * ps[i] + lam * ps[i + 1]
            rp_m = (1.0 - lam) * rp[i] + lam * rp[i + 1]
            psi[mid] = psi_m
            # knots return their own rho rather than the rounded ratio
            rho[mid] = np.where(lam == 0.0, rh[i], rp_m / psi_m)
        return theta, rho, psi

    def params_at(self, t: float) -> SliceParams:
        theta, rho, psi = self.param_arrays(t)
        return SliceParams(float(theta[0]), float(rho[0]), float(psi[0]))

    def total_variance_at(self, t: float, k):
        return total_variance(k, self.params_at(t))

    # -- market metadata --------------------------------------------------

    def _log_curve(self, t: float, values: Sequence[float], origin: float | None) -> float:
        """Log-linear interpolation in time with flat-rate extrapolation at both ends."""
        times = list(self.maturities)
        logs = [math.log(v) for v in values]
        if origin is not None:
            times.insert(0, 0.0)
            logs.insert(0, math.log(origin))
        if len(times) == 1:
            return math.exp(logs[0])
        j = int(np.clip(np.searchsorted(times, t, side="right") - 1, 0, len(times) - 2))
        slope = (logs[j + 1] - logs[j]) / (times[j + 1] - times[j])
        return math.exp(logs[j] + slope * (t - times[j]))

    def forward_at(self, t: float) -> float:
        if not t > 0:
            raise ValueError("time must be positive")
        return self._log_curve(t, self.forwards, self.spot)

    def discount_at(self, t: float) -> float:
        if not t > 0:
            raise ValueError("time must be positive")
        return self._log_curve(t, self.discounts, 1.0)

    def implied_vol_at(self, t: float, strike: float) -> float:
        if not strike > 0:
            raise ValueError("strike must be positive")
        k = math.log(strike / self.forward_at(t))
        return math.sqrt(self.total_variance_at(t, k) / t)


def serialize(surface: EssviSurface) -> bytes:
    def num(x: float) -> str:
        return format(x, ".17g")

    lines = [
        f"{MAGIC} {FORMAT_VERSION}",
        f"valuation_date {surface.valuation_date.isoformat() if surface.valuation_date else '-'}",
        f"spot {num(surface.spot) if surface.spot is not None else '-'}",
        f"long_term_rule {surface.long_term_rule}",
        ",".join(COLUMNS),
    ]
    for T, p, F, DF in zip(surface.maturities, surface.slices, surface.forwards, surface.discounts):
        lines.append(",".join(num(v) for v in (T, F, DF, p.theta, p.rho, p.psi)))
    return ("\n".join(lines) + "\n").encode("ascii")


def _header_value(line: str, key: str) -> str:
    name, _, value = line.partition(" ")
    if name != key or not value:
        raise SurfaceFormatError(f"expected '{key} <value>', got {line!r}")
    return value.strip()


def deserialize(data: bytes | str, validate: bool = True) -> EssviSurface:
    """Parse a serialized surface; with ``validate`` reject arbitrageable parameter sets."""
    text = data.decode("ascii") if isinstance(data, (bytes, bytearray)) else data
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if len(lines) < 6:
        raise SurfaceFormatError("truncated surface file")
    magic, _, version = lines[0].partition(" ")
    if magic != MAGIC:
        raise SurfaceFormatError(f"not an eSSVI surface file (header {lines[0]!r})")
    if version.strip() != str(FORMAT_VERSION):
        raise SurfaceFormatError(f"unsupported surface format version {version.strip()!r}, expected {FORMAT_VERSION}")
    try:
        vd = _header_value(lines[1], "valuation_date")
        valuation_date = None if vd == "-" else dt.date.fromisoformat(vd)
        sp = _header_value(lines[2], "spot")
        spot = None if sp == "-" else float(sp)
    except ValueError as exc:
        raise SurfaceFormatError(f"bad header value: {exc}") from exc
    rule = _header_value(lines[3], "long_term_rule")
    if tuple(c.strip() for c in lines[4].split(",")) != COLUMNS:
        raise SurfaceFormatError(f"unexpected column header {lines[4]!r}")
    rows = []
    for lineno, line in enumerate(lines[5:], start=6):
        try:
            values = [float(v) for v in line.split(",")]
        except ValueError as exc:
            raise SurfaceFormatError(f"line {lineno}: {exc}") from exc
        if len(values) != len(COLUMNS):
            raise SurfaceFormatError(f"line {lineno}: expected {len(COLUMNS)} fields, got {len(values)}")
        rows.append(values)
    params = tuple(SliceParams(th, rho, psi) for _, _, _, th, rho, psi in rows)
    if validate:
        report = check_conditions(params)
        if not report.ok:
            detail = "; ".join(f"{v.kind} at {v.location} (by {v.magnitude:.3g})" for v in report.violations)
            raise SurfaceValidationError(f"surface admits arbitrage: {detail}", report)
    try:
        return EssviSurface(
            tuple(r[0] for r in rows),
            params,
            tuple(r[1] for r in rows),
            tuple(r[2] for r in rows),
            valuation_date,
            spot,
            rule,
        )
    except ValueError as exc:
        raise SurfaceFormatError(str(exc)) from exc


def write_surface(path: str | os.PathLike, surface: EssviSurface) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(surface))


def read_surface(path: str | os.PathLike, validate: bool = True) -> EssviSurface:
    with open(path, "rb") as fh:
        return deserialize(fh.read(), validate)
