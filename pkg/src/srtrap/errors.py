"""Exception types shared across the simulation modules."""


class SrTrapError(Exception):
    """Base class for all srtrap errors."""


class UnstableParametersError(SrTrapError):
    """Trap drive parameters fall outside the first stability region."""


class OutOfRegionError(SrTrapError):
    """Position lies outside the modeled quadrupole region."""


class BlowUpError(SrTrapError):
    """Numerical instability sentinel: an ion exceeded the speed limit."""


class ControlRunError(SrTrapError):
    """An untickled control cloud lost too many ions."""


class TooFewIonsError(SrTrapError):
    """Operation needs more ions than the state contains."""


class DegenerateFitError(SrTrapError):
    """A fit could not be performed (e.g. all counts zero)."""


class CalibrationRangeError(SrTrapError):
    """Input outside the calibrated range of an empirical model."""


class NoSolutionError(SrTrapError):
    """Inversion has no physical solution (e.g. implied q unstable)."""


class ConfigError(SrTrapError):
    """Scenario configuration could not be parsed or validated."""

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        if line is not None:
            message = f"line {line}" + (f", col {column}" if column is not None else "") + f": {message}"
        super().__init__(message)


class DigestMismatchError(SrTrapError):
    """Configuration content changed since the run record was written."""
