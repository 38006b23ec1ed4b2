"""Arbitrage-free eSSVI volatility surfaces calibrated slice by slice."""

from essvi.black_scholes import PricingInput, bs_price, black_price, implied_vol
from essvi.calibration import (
    CalibrationConfig,
    SliceFit,
    calibrate_slice,
    calibrate_surface,
    objective,
)
from essvi.core import (
    Anchor,
    FeasibleInterval,
    SliceParams,
    feasible_interval,
    phi_monotone_bound,
    psi_minus,
    psi_plus,
    theta_from_anchor,
    theta_hat_constraint,
    total_variance,
)
from essvi.errors import (
    CalibrationInfeasibleError,
    ChainParseError,
    EssviError,
    ForwardInferenceError,
    ImpliedVolError,
    InfeasibleParametersError,
    SliceBuildError,
    SurfaceFormatError,
    SurfaceValidationError,
)
from essvi.market_data import (
    ChainFormat,
    MaturitySlice,
    OptionQuote,
    QuoteChain,
    build_maturity_slice,
    build_slices,
    infer_forward_discount,
    parse_chain,
)
from essvi.no_arb import (
    ArbReport,
    check_butterfly_numerical,
    check_calendar_numerical,
    check_conditions,
    check_surface,
)
from essvi.surface import EssviSurface, deserialize, read_surface, serialize, write_surface

__all__ = [
    "Anchor",
    "ArbReport",
    "CalibrationConfig",
    "CalibrationInfeasibleError",
    "ChainFormat",
    "ChainParseError",
    "EssviError",
    "EssviSurface",
    "FeasibleInterval",
    "ForwardInferenceError",
    "ImpliedVolError",
    "InfeasibleParametersError",
    "MaturitySlice",
    "OptionQuote",
    "PricingInput",
    "QuoteChain",
    "SliceBuildError",
    "SliceFit",
    "SliceParams",
    "SurfaceFormatError",
    "SurfaceValidationError",
    "black_price",
    "bs_price",
    "build_maturity_slice",
    "build_slices",
    "calibrate_slice",
    "calibrate_surface",
    "check_butterfly_numerical",
    "check_calendar_numerical",
    "check_conditions",
    "check_surface",
    "deserialize",
    "feasible_interval",
    "implied_vol",
    "infer_forward_discount",
    "objective",
    "parse_chain",
    "phi_monotone_bound",
    "psi_minus",
    "psi_plus",
    "read_surface",
    "serialize",
    "theta_from_anchor",
    "theta_hat_constraint",
    "total_variance",
    "write_surface",
]
