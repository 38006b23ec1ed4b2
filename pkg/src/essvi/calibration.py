"""Going-forward slice calibration: correlation grid sweep with a bounded Brent search in psi.

For each sampled correlation the admissible curvature interval is explicit, so the
inner problem is a one-dimensional bounded minimization. The correlation grid is
then refined around the incumbent. Slices are calibrated from the shortest
maturity onwards, each constrained by its predecessor so that no calendar-spread
arbitrage can appear between consecutive slices.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.special import ndtr

from essvi.core import SliceParams, anchored_params, feasible_interval
from essvi.errors import CalibrationInfeasibleError
from essvi.market_data import MaturitySlice
from essvi.optimize import brent_minimize

OBJECTIVES = ("price_L1", "price_L2", "vol_L1")
ANCHOR_MODES = ("exact", "first_order")


@dataclass(frozen=True)
class CalibrationConfig:
    n_rho: int = 20
    refinement_rounds: int = 6
    shrink_factor: float = 0.2
    brent_tolerance: float = 1e-8
    objective: str = "price_L1"
    anchor: str = "exact"
    # theta must beat the previous slice by this much
    margin: float = 1e-9
    # lower end used when the admissible psi interval is open at zero
    psi_floor: float = 1e-8
    rho_limit: float = 0.999
    # cap psi/theta at the previous slice's value; see core.phi_monotone_bound
    phi_non_increasing: bool = True

    def __post_init__(self) -> None:
        if self.n_rho < 3:
            raise ValueError("n_rho must be at least 3")
        if not 0.0 < self.shrink_factor < 1.0:
            raise ValueError("shrink_factor must lie in (0, 1)")
        if self.refinement_rounds < 0:
            raise ValueError("refinement_rounds must be non-negative")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        if self.anchor not in ANCHOR_MODES:
            raise ValueError(f"anchor must be one of {ANCHOR_MODES}")
        if not 0.0 < self.rho_limit < 1.0:
            raise ValueError("rho_limit must lie in (0, 1)")

    @classmethod
    def from_mapping(cls, cfg: Mapping) -> "CalibrationConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(cfg) - known
        if unknown:
            raise ValueError(f"unknown calibration config keys: {sorted(unknown)}")
        return cls(**cfg)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SliceFit:
    params: SliceParams
    objective_value: float
    per_point_errors: tuple[float, ...]
    rho_grid_trace: tuple[tuple[float, float, float], ...]
    # incumbent objective after each sweep (initial grid, then refinements)
    round_objectives: tuple[float, ...] = ()


class SliceObjective:
    """Vectorized fit criterion for one maturity slice."""

    def __init__(self, sl: MaturitySlice, kind: str = "price_L1", exact_anchor: bool = True):
        if kind not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        arr = sl.arrays
        self.kind = kind
        self.T = sl.T
        self.anchor = sl.anchor
        self.exact_anchor = exact_anchor
        self.k = arr["k"]
        self.mid = arr["mid"]
        self.eta = np.where(arr["is_call"], 1.0, -1.0)
        self.x = -self.k
        self.scale = sl.discount * np.sqrt(sl.forward * arr["strike"])
        self.e_plus = np.exp(0.5 * self.x)
        self.e_minus = np.exp(-0.5 * self.x)
        iv = arr["market_iv"]
        self.iv_mask = np.isfinite(iv)
        self.market_iv = iv[self.iv_mask]

    def model_prices(self, p: SliceParams) -> np.ndarray:
        k = self.k
        w = 0.5 * (p.theta + p.rho * p.psi * k + p.theta * np.sqrt((p.psi * k / p.theta + p.rho) ** 2 + 1.0 - p.rho**2))
        s = np.sqrt(w)
        xs = self.x / s
        eta = self.eta
        b = eta * (self.e_plus * ndtr(eta * (xs + 0.5 * s)) - self.e_minus * ndtr(eta * (xs - 0.5 * s)))
        return self.scale * b

    def errors(self, p: SliceParams) -> np.ndarray:
        """Signed per-point errors, model minus market, in the objective's units."""
        if self.kind == "vol_L1":
            w = 0.5 * (p.theta + p.rho * p.psi * self.k + p.theta * np.sqrt((p.psi * self.k / p.theta + p.rho) ** 2 + 1.0 - p.rho**2))
            return np.sqrt(w[self.iv_mask] / self.T) - self.market_iv
        return self.model_prices(p) - self.mid

    def value(self, p: SliceParams) -> float:
        err = self.errors(p)
        if self.kind == "price_L2":
            return float(err @ err)
        return float(np.abs(err).sum())

    def __call__(self, rho: float, psi: float) -> float:
        return self.value(anchored_params(rho, psi, self.anchor, self.exact_anchor))


def objective(p: SliceParams, sl: MaturitySlice, kind: str = "price_L1") -> float:
    """Fit criterion of ``p`` against the slice mids (default: sum of absolute price errors)."""
    return SliceObjective(sl, kind).value(p)


def _best_psi(rho: float, obj: SliceObjective, prev: SliceParams | None, cfg: CalibrationConfig):
    interval = feasible_interval(rho, obj.anchor, prev, cfg.margin, obj.exact_anchor, cfg.phi_non_increasing)
    if interval.empty or interval.hi <= 0.0:
        return math.nan, math.inf, interval
    lo = max(interval.lo, min(cfg.psi_floor, interval.hi))
    hi = interval.hi
    f = lambda psi: obj(rho, psi)  # noqa: E731
    res = brent_minimize(f, lo, hi, xtol=cfg.brent_tolerance)
    best_f, best_psi = res.fun, res.x
    # Brent never evaluates the end points, where constrained optima often sit
    for edge in (lo, hi):
        fe = f(edge)
        if fe < best_f:
            best_f, best_psi = fe, edge
    return best_psi, best_f, interval


def calibrate_slice(
    sl: MaturitySlice,
    prev: SliceParams | None = None,
    cfg: CalibrationConfig | None = None,
    mapper: Callable = map,
) -> SliceFit:
    """Fit ``(rho, psi)`` of an anchored slice, admissible against ``prev``.

    ``mapper`` evaluates the correlation grid; every grid point is independent, so an
    executor's ``map`` may be passed to spread the sweep over workers.
    """
    cfg = cfg or CalibrationConfig()
    obj = SliceObjective(sl, cfg.objective, cfg.anchor == "exact")
    limit = cfg.rho_limit
    lo_w, hi_w = -limit, limit
    width = hi_w - lo_w
    best: tuple[float, float, float] | None = None
    trace: list[tuple[float, float, float]] = []
    rounds: list[float] = []
    empties: dict[float, list[str]] = {}

    for _ in range(cfg.refinement_rounds + 1):
        grid = np.linspace(lo_w, hi_w, cfg.n_rho)
        results = list(mapper(lambda r: _best_psi(float(r), obj, prev, cfg), grid))
        for rho, (psi, f, interval) in zip(grid, results):
            rho = float(rho)
            trace.append((rho, psi, f))
            if not math.isfinite(f):
                empties[rho] = sorted(interval.active_bounds)
                continue
            if best is None or f < best[0]:
                best = (f, rho, psi)
        if best is None:
            raise CalibrationInfeasibleError(
                f"empty admissible set for every sampled rho at {sl.label()}",
                diagnostics={"empty_bounds": empties},
            )
        rounds.append(best[0])
        width *= cfg.shrink_factor
        lo_w = max(-limit, best[1] - 0.5 * width)
        hi_w = min(limit, best[1] + 0.5 * width)

    f, rho, psi = best
    params = anchored_params(rho, psi, obj.anchor, obj.exact_anchor)
    errors = obj.errors(params)
    return SliceFit(params, f, tuple(float(e) for e in errors), tuple(trace), tuple(rounds))


def calibrate_surface(
    slices: Sequence[MaturitySlice],
    cfg: CalibrationConfig | None = None,
    mapper: Callable = map,
) -> list[SliceFit]:
    """Calibrate slices shortest first, each against the previously calibrated one."""
    cfg = cfg or CalibrationConfig()
    Ts = [s.T for s in slices]
    if not slices:
        raise ValueError("no slices to calibrate")
    if any(b <= a for a, b in zip(Ts, Ts[1:])):
        raise ValueError("slices must be sorted by strictly increasing maturity")
    fits: list[SliceFit] = []
    prev = None
    for i, sl in enumerate(slices):
        try:
            fit = calibrate_slice(sl, prev, cfg, mapper)
        except CalibrationInfeasibleError as exc:
            raise CalibrationInfeasibleError(
                f"maturity #{i} ({sl.label()}): {exc}", maturity_index=i, diagnostics=exc.diagnostics
            ) from exc
        fits.append(fit)
        prev = fit.params
    return fits


def params_of(fits: Iterable[SliceFit]) -> list[SliceParams]:
    return [f.params for f in fits]
