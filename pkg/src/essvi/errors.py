"""Exception hierarchy. The CLI maps these onto exit codes."""

from __future__ import annotations


class EssviError(Exception):
    """Base class for all library errors."""


class ChainParseError(EssviError):
    """The option chain could not be read or contained no usable rows."""


class ForwardInferenceError(EssviError):
    """Put-call parity regression failed or produced an implausible forward/discount."""


class ImpliedVolError(EssviError, ValueError):
    """Price lies outside the no-arbitrage band, so no implied volatility exists."""


class SliceBuildError(EssviError):
    """A maturity slice could not be assembled from its quotes."""


class InfeasibleParametersError(EssviError, ValueError):
    """Parameters produce a non-positive ATM total variance."""


class CalibrationInfeasibleError(EssviError):
    """Every sampled correlation produced an empty admissible curvature interval."""

    def __init__(self, message: str, maturity_index: int | None = None, diagnostics=None):
        super().__init__(message)
        self.maturity_index = maturity_index
        self.diagnostics = diagnostics or {}


class SurfaceFormatError(EssviError):
    """A serialized surface is malformed or has an unsupported version."""


class SurfaceValidationError(EssviError):
    """A surface violates the no-arbitrage conditions between its slices."""

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report
