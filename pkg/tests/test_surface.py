from __future__ import annotations

import math

import numpy as np
import pytest
from surface_draws import random_surface

from essvi.black_scholes import implied_vol
from essvi.core import SliceParams, total_variance
from essvi.errors import SurfaceFormatError, SurfaceValidationError
from essvi.market_data import build_slices
from essvi.no_arb import check_conditions
from essvi.samples import SPX_SPOT_20180108, spx_maturities, spx_params, synthetic_chain
from essvi.surface import EssviSurface, deserialize, read_surface, serialize, write_surface


@pytest.fixture(scope="module")
def table_surface():
    T = spx_maturities()
    F = [SPX_SPOT_20180108 * math.exp(0.005 * t) for t in T]
    DF = [math.exp(-0.02 * t) for t in T]
    import datetime as dt

    return EssviSurface(tuple(T), tuple(spx_params()), tuple(F), tuple(DF), dt.date(2018, 1, 8), SPX_SPOT_20180108)


def test_knots_return_slice_params(table_surface):
    for T, p in zip(table_surface.maturities, table_surface.slices):
        assert table_surface.params_at(T) == p


def test_knot_continuity(table_surface):
    for T, p in zip(table_surface.maturities, table_surface.slices):
        for t in (T - 1e-9, T + 1e-9):
            q = table_surface.params_at(t)
            assert q.theta == pytest.approx(p.theta, rel=1e-6)
            assert q.psi == pytest.approx(p.psi, rel=1e-6)
            assert q.rho == pytest.approx(p.rho, abs=1e-6)


def test_constant_correlation_bucket():
    s = EssviSurface((0.5, 1.0), (SliceParams(0.01, -0.4, 0.1), SliceParams(0.02, -0.4, 0.12)), (100.0, 100.0), (1.0, 1.0))
    assert s.params_at(0.75).rho == pytest.approx(-0.4, rel=1e-15)


def test_flat_curvature_bucket_keeps_correlation():
    s = EssviSurface((0.5, 1.0), (SliceParams(0.01, -0.4, 0.1), SliceParams(0.02, -0.4, 0.1)), (100.0, 100.0), (1.0, 1.0))
    for t in np.linspace(0.5, 1.0, 11):
        assert s.params_at(t).rho == pytest.approx(-0.4, rel=1e-14)


def test_bucket_interpolation_is_linear_in_theta_psi_and_rho_psi(table_surface):
    p1, p2 = table_surface.slices[2], table_surface.slices[3]
    T1, T2 = table_surface.maturities[2], table_surface.maturities[3]
    lam = 0.3
    q = table_surface.params_at(T1 + lam * (T2 - T1))
    assert q.theta == pytest.approx((1 - lam) * p1.theta + lam * p2.theta, rel=1e-13)
    assert q.psi == pytest.approx((1 - lam) * p1.psi + lam * p2.psi, rel=1e-13)
    assert q.rho_psi == pytest.approx((1 - lam) * p1.rho_psi + lam * p2.rho_psi, rel=1e-13)


def test_short_end_scales_first_slice(table_surface):
    p = table_surface.slices[0]
    q = table_surface.params_at(table_surface.maturities[0] / 2)
    assert q.theta == pytest.approx(p.theta / 2, rel=1e-14)
    assert q.psi == pytest.approx(p.psi / 2, rel=1e-14)
    assert q.rho == p.rho


def test_long_end_freezes_shape(table_surface):
    p = table_surface.slices[-1]
    q = table_surface.params_at(10.0)
    assert (q.rho, q.psi) == (p.rho, p.psi)
    assert q.theta > p.theta


def test_long_end_atm_vol_is_flat(table_surface):
    T_N, theta_N = table_surface.maturities[-1], table_surface.slices[-1].theta
    target = math.sqrt(theta_N / T_N)
    for t in (T_N * 1.01, 4.0, 10.0, 30.0):
        vol = table_surface.implied_vol_at(t, table_surface.forward_at(t))
        assert vol == pytest.approx(target, abs=1e-12)


def test_last_bucket_slope_rule(table_surface):
    s = EssviSurface(*[getattr(table_surface, f) for f in ("maturities", "slices", "forwards", "discounts", "valuation_date", "spot")], "last_bucket_slope")
    T, th = s.maturities, [p.theta for p in s.slices]
    slope = (th[-1] - th[-2]) / (T[-1] - T[-2])
    assert s.params_at(T[-1] + 1.0).theta == pytest.approx(th[-1] + slope, rel=1e-14)


def test_atm_variance_at_knots(table_surface):
    for T, p in zip(table_surface.maturities, table_surface.slices):
        assert table_surface.total_variance_at(T, 0.0) == pytest.approx(p.theta, rel=1e-15)


def test_variance_increases_in_time(table_surface):
    w = [table_surface.total_variance_at(t, 0.1) for t in np.linspace(0.01, 4.0, 200)]
    assert all(b >= a for a, b in zip(w, w[1:]))


def test_variance_vanishes_at_time_zero(table_surface):
    assert table_surface.total_variance_at(1e-12, 0.05) < 1e-12


def test_atm_vol_matches_table_column(table_surface):
    t = 0.701370
    vol = table_surface.implied_vol_at(t, table_surface.forward_at(t))
    assert vol == pytest.approx(0.1194, abs=5e-5)
    assert round(100 * vol, 1) == 11.9
    assert table_surface.implied_vol_at(t, 2800.0) == table_surface.implied_vol_at(t, 2800.0)


def test_implied_vol_at_quoted_points():
    T = [0.25, 0.75]
    params = [SliceParams(0.0049, -0.61, 0.089), SliceParams(0.0158, -0.704, 0.131)]
    slices = build_slices(synthetic_chain(T, params))
    s = EssviSurface(tuple(T), tuple(params), tuple(x.forward for x in slices), tuple(x.discount for x in slices))
    for sl in slices:
        for pt in sl.points[::7]:
            iv = implied_vol(pt.mid, sl.forward, pt.strike, sl.T, sl.discount, pt.is_call)
            assert s.implied_vol_at(sl.T, pt.strike) == pytest.approx(iv, abs=1e-8)


def test_forward_and_discount_curves(table_surface):
    for T, F, DF in zip(table_surface.maturities, table_surface.forwards, table_surface.discounts):
        assert table_surface.forward_at(T) == pytest.approx(F, rel=1e-14)
        assert table_surface.discount_at(T) == pytest.approx(DF, rel=1e-14)
    # curves built from constant rates are reproduced everywhere
    for t in (0.01, 0.5, 2.0, 6.0):
        assert table_surface.forward_at(t) == pytest.approx(SPX_SPOT_20180108 * math.exp(0.005 * t), rel=1e-12)
        assert table_surface.discount_at(t) == pytest.approx(math.exp(-0.02 * t), rel=1e-12)


def test_non_positive_time_rejected(table_surface):
    for t in (0.0, -1.0):
        with pytest.raises(ValueError):
            table_surface.params_at(t)
        with pytest.raises(ValueError):
            table_surface.forward_at(t)


def test_structural_validation():
    p = SliceParams(0.01, 0.0, 0.1)
    with pytest.raises(ValueError):
        EssviSurface((), (), (), ())
    with pytest.raises(ValueError):
        EssviSurface((1.0, 0.5), (p, p), (1.0, 1.0), (1.0, 1.0))
    with pytest.raises(ValueError):
        EssviSurface((1.0,), (p,), (1.0,), (1.0,), long_term_rule="cubic")


def test_serialization_round_trip(table_surface, tmp_path):
    blob = serialize(table_surface)
    assert deserialize(blob) == table_surface
    path = tmp_path / "table.essvi"
    write_surface(path, table_surface)
    back = read_surface(path)
    assert back == table_surface
    lines = blob.decode().splitlines()
    assert lines[:4] == ["ESSVI-SURFACE 1", "valuation_date 2018-01-08", "spot 2747.71", "long_term_rule flat_atm_vol"]
    assert len(back.slices) == 12 and len(lines) == 5 + 12


def test_round_trip_keeps_full_precision():
    rng = np.random.default_rng(2)
    for _ in range(20):
        s = random_surface(rng, 5)
        assert deserialize(serialize(s)) == s


def test_decreasing_theta_rejected(table_surface):
    lines = serialize(table_surface).decode().splitlines()
    lines[5], lines[6] = lines[6], lines[5]
    # restore increasing maturities so only the parameters are out of order
    a, b = lines[5].split(","), lines[6].split(",")
    a[:3], b[:3] = b[:3], a[:3]
    lines[5], lines[6] = ",".join(a), ",".join(b)
    with pytest.raises(SurfaceValidationError, match="condition_1 at slices 0-1") as info:
        deserialize("\n".join(lines))
    assert "condition_1" in info.value.report.kinds()
    assert deserialize("\n".join(lines), validate=False).slices[0].theta == table_surface.slices[1].theta


@pytest.mark.parametrize(
    "mutate, message",
    [
        (lambda ls: ["ESSVI-SURFACE 2"] + ls[1:], "version"),
        (lambda ls: ["SVI 1"] + ls[1:], "not an eSSVI"),
        (lambda ls: ls[:4], "truncated"),
        (lambda ls: ls[:5] + ["1,2,3"] + ls[6:], "expected 6 fields"),
        (lambda ls: ls[:5] + ["a,b,c,d,e,f"] + ls[6:], "line 6"),
        (lambda ls: ls[:4] + ["T,F,theta,rho,psi,DF"] + ls[5:], "column header"),
        (lambda ls: [ls[0], "valuation_date yesterday"] + ls[2:], "header"),
    ],
)
def test_malformed_files_rejected(table_surface, mutate, message):
    lines = serialize(table_surface).decode().splitlines()
    with pytest.raises(SurfaceFormatError, match=message):
        deserialize("\n".join(mutate(lines)))


def test_random_surfaces_stay_arbitrage_free():
    rng = np.random.default_rng(13)
    k = np.linspace(-1.5, 1.5, 61)
    for _ in range(50):
        s = random_surface(rng, 4)
        assert check_conditions(s.slices).ok
        ts = np.sort(rng.uniform(0.001, 2.5 * s.maturities[-1], 60))
        params = [s.params_at(t) for t in ts]
        assert all(p.butterfly_ok(tol=1e-12) for p in params)
        w = np.array([total_variance(k, p) for p in params])
        assert np.all(np.diff(w, axis=0) >= -1e-15)
