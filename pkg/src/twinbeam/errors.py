"""Exception and warning types shared across the package.

The CLI maps these onto process exit codes: configuration problems exit 2,
numerical failures exit 3, data-format problems exit 4.
"""

from __future__ import annotations


class TwinbeamError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(TwinbeamError, ValueError):
    """A constructor or operation received an out-of-contract argument."""


class ConfigError(TwinbeamError):
    """Bad or unknown key, unparsable value, or missing config file."""


class DataFormatError(TwinbeamError):
    """Malformed on-disk data (event CSV, histogram dump, ...)."""


class NumericsError(TwinbeamError):
    """An integration or estimation step failed to produce a usable result."""


class IntegrationError(NumericsError):
    """The ODE solver did not converge within its tolerance budget."""


class CoverageError(NumericsError):
    """A requested grid is not covered by the available solution span."""


class GridMismatchError(InvalidParameterError):
    """Two objects that must share a time grid do not."""


class ThresholdExceededError(NumericsError):
    """Moment equations blew up (parametric oscillation threshold reached).

    Attributes
    ----------
    blow_up_time : float
        Time (ps) at which the divergence was detected.
    """

    def __init__(self, blow_up_time: float, message: str | None = None):
        self.blow_up_time = float(blow_up_time)
        if message is None:
            message = (
                "moment equations diverged at t = %.1f ps; the drive exceeds "
                "the oscillation threshold for these parameters" % blow_up_time
            )
        super().__init__(message)


class TruncationError(NumericsError):
    """Fock-space cutoff too small for the requested evolution."""


class BracketError(NumericsError):
    """An extremum search hit the edge of its bracket."""


class IllConditionedError(NumericsError):
    """A linear inversion was refused because of its condition number."""


class UndepletedPumpWarning(UserWarning):
    """Signal population no longer negligible against the pump."""


class CoverageWarning(UserWarning):
    """A default grid captures less of the emission than intended."""


class ChainMixingWarning(UserWarning):
    """MCMC acceptance rate outside the healthy range."""


class TailMassWarning(UserWarning):
    """A truncated distribution left more probability in the tail than usual."""
