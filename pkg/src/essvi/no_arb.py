"""Arbitrage diagnostics for eSSVI parameter sets and continuous surfaces.

Two independent routes are provided. ``check_conditions`` evaluates the closed-form
conditions between consecutive slices (strictly increasing theta, non-decreasing psi,
the butterfly bounds, and the correlation-slope condition written without
division). The numerical checks look at the smiles themselves: the Durrleman
density function ``g(k)`` for butterflies, and the gap between total-variance
smiles for calendar spreads.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from essvi.black_scholes import normalized_black
from essvi.core import SliceParams, total_variance, variance_derivatives

# default k-grid: 401 points over +/- 10 sqrt(theta)
GRID_POINTS = 401
GRID_HALF_WIDTH = 10.0


@dataclass(frozen=True)
class Violation:
    kind: str
    location: str
    magnitude: float


@dataclass
class ArbReport:
    butterfly_ok: list[bool] = field(default_factory=list)
    calendar_ok: list[bool] = field(default_factory=list)
    min_g: list[float] = field(default_factory=list)
    min_variance_gap: list[float] = field(default_factory=list)
    violations: list[Violation] = field(default_factory=list)
    t_samples: list[float] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def kinds(self) -> set[str]:
        return {v.kind for v in self.violations}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ok"] = self.ok
        return d


def default_k_grid(theta: float, n: int = GRID_POINTS) -> np.ndarray:
    half = GRID_HALF_WIDTH * math.sqrt(theta)
    return np.linspace(-half, half, n)


def check_conditions(params: Sequence[SliceParams], tol: float = 1e-12) -> ArbReport:
    """Closed-form no-arbitrage conditions for slices ordered by maturity.

    Per slice: ``psi <= min(4/(1+|rho|), 2 sqrt(theta/(1+|rho|)))``. Per consecutive
    pair: ``theta`` strictly increasing, ``psi`` non-decreasing and
    ``|d(rho psi)| <= d psi``. ``tol`` absorbs rounding in the non-strict checks.
    """
    report = ArbReport()
    for j, p in enumerate(params):
        a = 1.0 + abs(p.rho)
        excess = max(p.psi - 4.0 / a, p.psi - 2.0 * math.sqrt(max(p.theta, 0.0) / a))
        ok = excess <= tol and p.theta > 0
        report.butterfly_ok.append(ok)
        if not ok:
            report.violations.append(Violation("condition_3", f"slice {j}", excess))
    for j in range(len(params) - 1):
        lo, hi = params[j], params[j + 1]
        ok = True
        if not hi.theta > lo.theta:
            report.violations.append(Violation("condition_1", f"slices {j}-{j + 1}", lo.theta - hi.theta))
            ok = False
        d_psi = hi.psi - lo.psi
        if d_psi < -tol:
            report.violations.append(Violation("condition_2", f"slices {j}-{j + 1}", -d_psi))
            ok = False
        slope_excess = abs(hi.rho_psi - lo.rho_psi) - d_psi
        if slope_excess > tol:
            report.violations.append(Violation("condition_4", f"slices {j}-{j + 1}", slope_excess))
            ok = False
        report.calendar_ok.append(ok)
    return report


def durrleman_g(k, p: SliceParams) -> np.ndarray:
    """``g(k)``; the risk-neutral density is non-negative exactly where ``g >= 0``."""
    w, dw, d2w = variance_derivatives(k, p)
    k = np.asarray(k, dtype=float)
    return (1.0 - k * dw / (2.0 * w)) ** 2 - 0.25 * dw * dw * (1.0 / w + 0.25) + 0.5 * d2w


def check_butterfly_numerical(p: SliceParams, k_grid=None) -> float:
    """Minimum of the Durrleman function over ``k_grid``."""
    k = default_k_grid(p.theta) if k_grid is None else np.asarray(k_grid, dtype=float)
    return float(np.min(durrleman_g(k, p)))


def check_calendar_numerical(p1: SliceParams, p2: SliceParams, k_grid=None) -> float:
    """Minimum over ``k_grid`` of ``w(k; p2) - w(k; p1)`` with ``p1`` the earlier slice."""
    k = default_k_grid(max(p1.theta, p2.theta)) if k_grid is None else np.asarray(k_grid, dtype=float)
    return float(np.min(total_variance(k, p2) - total_variance(k, p1)))


def min_call_convexity(p: SliceParams, k_grid=None) -> float:
    """Smallest second difference of normalized option prices in strike.

    A finite-difference counterpart of the density check: undiscounted calls on
    ``F = 1`` must be convex in strike. Strikes are spaced uniformly over the span
    of ``k_grid`` so the central difference is second-order accurate, and OTM
    options stand in for calls (parity differs by a linear function of strike).
    """
    k = default_k_grid(p.theta) if k_grid is None else np.asarray(k_grid, dtype=float)
    strikes = np.linspace(math.exp(k.min()), math.exp(k.max()), k.size)
    kk = np.log(strikes)
    s = np.sqrt(total_variance(kk, p))
    eta = np.where(kk >= 0.0, 1.0, -1.0)
    prices = np.sqrt(strikes) * normalized_black(-kk, s, eta)
    h = strikes[1] - strikes[0]
    curvature = (prices[2:] - 2.0 * prices[1:-1] + prices[:-2]) / (h * h)
    # the put and call branches join at K = 1; skip stencils straddling it
    same_side = eta[2:] == eta[:-2]
    return float(np.min(curvature[same_side]))


def default_t_samples(surface) -> list[float]:
    """Knots, bucket interior points, and both extrapolation regions."""
    T = list(surface.maturities)
    ts = set(T)
    ts.update(T[0] * f for f in (0.05, 0.25, 0.5, 0.75, 0.95))
    for a, b in zip(T, T[1:]):
        ts.update(a + f * (b - a) for f in (0.1, 0.5, 0.9))
    ts.update(T[-1] * f for f in (1.1, 1.5, 2.0, 4.0))
    return sorted(ts)


def check_surface(
    surface,
    t_samples: Sequence[float] | None = None,
    k_grid=None,
    g_tol: float = 1e-9,
    gap_tol: float = 1e-12,
) -> ArbReport:
    """Closed-form and numerical checks on slices interpolated at ``t_samples``."""
    ts = sorted(default_t_samples(surface) if t_samples is None else t_samples)
    params = [surface.params_at(t) for t in ts]
    report = check_conditions(params)
    report.t_samples = list(ts)
    for t, p in zip(ts, params):
        g = check_butterfly_numerical(p, k_grid)
        report.min_g.append(g)
        if g < -g_tol:
            report.butterfly_ok[len(report.min_g) - 1] = False
            report.violations.append(Violation("butterfly_numerical", f"t={t:.6g}", -g))
    for j in range(len(params) - 1):
        p1, p2 = params[j], params[j + 1]
        gap = check_calendar_numerical(p1, p2, k_grid)
        report.min_variance_gap.append(gap)
        scale = max(p1.theta, p2.theta)
        if gap < -gap_tol * max(scale, 1.0):
            report.calendar_ok[j] = False
            report.violations.append(Violation("calendar_numerical", f"t={ts[j]:.6g}-{ts[j + 1]:.6g}", -gap))
    return report
