"""eSSVI slice formula, anchored parameterization and admissible curvature bounds.

A slice is described by ``(theta, rho, psi)`` with ``psi = theta * phi``::

    w(k) = theta/2 * (1 + rho*phi*k + sqrt((phi*k + rho)**2 + 1 - rho**2))

Anchoring a slice at a market point ``(k*, theta*)`` eliminates ``theta``. Solving
``w(k*) = theta*`` for ``theta`` with ``psi`` held fixed gives the exact quadratic

    theta = theta* - rho*psi*k* - (1 - rho**2) * (psi*k*)**2 / (4*theta*)

whose first two terms are the first-order form ``theta* - rho*psi*k*``. Every bound
below is written for ``theta(psi) = theta* - b*psi - c*psi**2`` with ``b = rho*k*``
and ``c`` equal to the quadratic coefficient (exact anchor) or zero (first order),
so both readings share one code path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from essvi.errors import InfeasibleParametersError

RHO_LIMIT = 0.999
BOUND_NAMES = ("psi_plus", "four_over", "theta_pos", "psi_minus", "theta_hat", "phi_monotone")


@dataclass(frozen=True)
class SliceParams:
    theta: float
    rho: float
    psi: float

    @property
    def phi(self) -> float:
        return self.psi / self.theta

    @property
    def rho_psi(self) -> float:
        return self.rho * self.psi

    def butterfly_ok(self, tol: float = 0.0) -> bool:
        """Sufficient no-butterfly bounds in curvature-product form."""
        a = 1.0 + abs(self.rho)
        return self.psi * a <= 4.0 + tol and self.psi * self.psi * a <= 4.0 * self.theta + tol


@dataclass(frozen=True)
class Anchor:
    k_star: float
    theta_star: float

    def __post_init__(self) -> None:
        if not self.theta_star > 0:
            raise ValueError("anchor total variance must be positive")


@dataclass(frozen=True)
class FeasibleInterval:
    """Closed admissible range ``[lo, hi]`` for psi; empty when ``lo > hi``.

    ``lo == 0`` stands for the open end at zero. ``active_bounds`` names the
    constraints that set each end.
    """

    lo: float
    hi: float
    active_bounds: frozenset[str] = field(default_factory=frozenset)

    @property
    def empty(self) -> bool:
        return not self.lo <= self.hi

    def __contains__(self, psi: float) -> bool:
        return not self.empty and self.lo <= psi <= self.hi and psi > 0


def total_variance(k, p: SliceParams):
    """Total implied variance of slice ``p`` at log-moneyness ``k`` (array friendly)."""
    return total_variance_raw(k, p.theta, p.rho, p.psi)


def total_variance_raw(k, theta, rho, psi):
    """Same as :func:`total_variance` with broadcastable parameter arrays."""
    k = np.asarray(k, dtype=float)
    # theta * phi * k = psi * k, so only the radical needs phi
    phik = psi * k / theta
    w = 0.5 * (theta + rho * psi * k + theta * np.sqrt((phik + rho) ** 2 + 1.0 - rho * rho))
    return w if w.ndim else float(w)


def variance_derivatives(k, p: SliceParams):
    """Analytic ``(w, dw/dk, d2w/dk2)`` of slice ``p``."""
    k = np.asarray(k, dtype=float)
    theta, rho, psi = p.theta, p.rho, p.psi
    phi = psi / theta
    u = phi * k + rho
    root = np.sqrt(u * u + 1.0 - rho * rho)
    w = 0.5 * theta * (1.0 + rho * phi * k + root)
    dw = 0.5 * psi * (rho + u / root)
    d2w = 0.5 * psi * phi * (1.0 - rho * rho) / root**3
    return w, dw, d2w


def anchor_curvature(rho: float, anchor: Anchor, exact: bool = True) -> float:
    """Coefficient ``c`` of ``psi**2`` in ``theta(psi)``; zero under the first-order anchor."""
    if not exact:
        return 0.0
    return (1.0 - rho * rho) * anchor.k_star**2 / (4.0 * anchor.theta_star)


def theta_from_anchor(rho: float, psi: float, anchor: Anchor, exact: bool = True) -> float:
    """ATM total variance of the slice through ``anchor`` with correlation ``rho``, curvature ``psi``."""
    b = rho * anchor.k_star
    c = anchor_curvature(rho, anchor, exact)
    theta = anchor.theta_star - b * psi - c * psi * psi
    if not theta > 0:
        raise InfeasibleParametersError(
            f"anchored theta is non-positive ({theta!r}) for rho={rho!r}, psi={psi!r}"
        )
    return theta


def anchored_params(rho: float, psi: float, anchor: Anchor, exact: bool = True) -> SliceParams:
    return SliceParams(theta_from_anchor(rho, psi, anchor, exact), rho, psi)


def _upper_root(a2: float, a1: float, a0: float) -> float:
    """Larger root of ``a2 x^2 + a1 x + a0`` for ``a2 >= 0``, ``a0 < 0`` (so it is positive)."""
    if a2 == 0.0:
        return -a0 / a1 if a1 > 0 else math.inf
    disc = math.sqrt(a1 * a1 - 4.0 * a2 * a0)
    if a1 >= 0.0:
        return -2.0 * a0 / (a1 + disc)
    return (disc - a1) / (2.0 * a2)


def _quadratic_region(a2: float, a1: float, a0: float) -> tuple[float, float]:
    """Interval of ``x >= 0`` with ``a2 x^2 + a1 x + a0 <= 0`` (``a2 >= 0``); ``lo > hi`` if empty.

    A constant polynomial must be strictly negative, so that ``theta* = prev_theta``
    with no psi dependence counts as infeasible.
    """
    if a2 == 0.0:
        if a1 > 0.0:
            return 0.0, -a0 / a1
        if a1 < 0.0:
            return max(0.0, -a0 / a1), math.inf
        return (0.0, math.inf) if a0 < 0.0 else (1.0, 0.0)
    disc = a1 * a1 - 4.0 * a2 * a0
    if disc < 0.0:
        return 1.0, 0.0
    sq = math.sqrt(disc)
    q = -0.5 * (a1 + math.copysign(sq, a1))
    if q == 0.0:
        r1 = r2 = 0.0
    else:
        r1, r2 = sorted((q / a2, a0 / q))
    if r2 < 0.0:
        return 1.0, 0.0
    return max(r1, 0.0), r2


def psi_plus(rho: float, anchor: Anchor, exact: bool = True) -> float:
    """Largest psi with ``psi**2 (1+|rho|) <= 4 theta(psi)`` along the anchored family.

    Under the first-order anchor this is
    ``-2 rho k*/(1+|rho|) + sqrt(4 rho^2 k*^2/(1+|rho|)^2 + 4 theta*/(1+|rho|))``.
    """
    c = anchor_curvature(rho, anchor, exact)
    a2 = 1.0 + abs(rho) + 4.0 * c
    return _upper_root(a2, 4.0 * rho * anchor.k_star, -4.0 * anchor.theta_star)


def theta_positivity_bound(rho: float, anchor: Anchor, exact: bool = True) -> float:
    """Supremum of psi keeping ``theta(psi) > 0``; ``inf`` when never binding."""
    c = anchor_curvature(rho, anchor, exact)
    return _upper_root(c, rho * anchor.k_star, -anchor.theta_star)


def phi_monotone_bound(rho: float, anchor: Anchor, prev: SliceParams, exact: bool = True) -> float:
    """Largest psi whose curvature ``psi/theta(psi)`` does not exceed the previous slice's.

    The four cross-slice conditions leave room for smiles that cross when the
    curvature grows with maturity; capping it removes those cases.
    """
    b = rho * anchor.k_star
    c = anchor_curvature(rho, anchor, exact)
    phi = prev.phi
    return _upper_root(c * phi, 1.0 + b * phi, -anchor.theta_star * phi)


def psi_minus(rho: float, prev_psi: float, prev_rho_psi: float) -> float:
    """Smallest psi satisfying ``|rho psi - prev_rho_psi| <= psi - prev_psi``."""
    return max((prev_psi - prev_rho_psi) / (1.0 - rho), (prev_psi + prev_rho_psi) / (1.0 + rho))


def theta_hat_constraint(
    rho: float,
    anchor: Anchor,
    prev_theta: float,
    margin: float = 0.0,
    exact: bool = True,
) -> FeasibleInterval:
    """Psi range on which the anchored theta exceeds ``prev_theta + margin``.

    Under the first-order anchor this is one-sided: ``psi < (theta* - prev_theta)/(rho k*)``
    when ``rho k* > 0``, ``psi > `` that value when ``rho k* < 0``, and for ``rho k* = 0``
    either everything (``theta* > prev_theta``) or nothing. The exact anchor adds a
    ``psi**2`` term, which can close the range from above as well.
    """
    b = rho * anchor.k_star
    c = anchor_curvature(rho, anchor, exact)
    gap = anchor.theta_star - prev_theta - margin
    lo, hi = _quadratic_region(c, b, -gap)
    binding = lo > 0.0 or math.isfinite(hi)
    return FeasibleInterval(lo, hi, frozenset({"theta_hat"}) if binding else frozenset())


def feasible_interval(
    rho: float,
    anchor: Anchor,
    prev: SliceParams | None = None,
    margin: float = 1e-9,
    exact: bool = True,
    phi_non_increasing: bool = False,
) -> FeasibleInterval:
    """Admissible psi range for correlation ``rho`` given the anchor and the previous slice.

    Upper ends: ``psi_plus``, ``4/(1+|rho|)`` and theta positivity. With a previous slice,
    lower ends ``psi_minus`` and the theta-increase constraint join in, and
    ``phi_non_increasing`` adds the curvature cap of :func:`phi_monotone_bound`.
    """
    if not abs(rho) < 1.0:
        raise ValueError("rho must lie in (-1, 1)")
    uppers = {
        "psi_plus": psi_plus(rho, anchor, exact),
        "four_over": 4.0 / (1.0 + abs(rho)),
        "theta_pos": theta_positivity_bound(rho, anchor, exact),
    }
    lowers = {}
    if prev is not None:
        lowers["psi_minus"] = psi_minus(rho, prev.psi, prev.rho_psi)
        th = theta_hat_constraint(rho, anchor, prev.theta, margin, exact)
        if th.empty:
            return FeasibleInterval(math.inf, -math.inf, frozenset({"theta_hat"}))
        uppers["theta_hat"] = th.hi
        lowers["theta_hat"] = th.lo
        if phi_non_increasing:
            uppers["phi_monotone"] = phi_monotone_bound(rho, anchor, prev, exact)
    hi_name = min(uppers, key=uppers.__getitem__)
    hi = uppers[hi_name]
    lo, lo_name = 0.0, None
    for name, value in lowers.items():
        if value > lo:
            lo, lo_name = value, name
    active = {hi_name} if lo_name is None else {hi_name, lo_name}
    return FeasibleInterval(lo, hi, frozenset(active))
