"""Exception taxonomy shared across the package."""


class SepsrError(Exception):
    """Base class for all package errors."""


class InputError(SepsrError, ValueError):
    """Caller passed out-of-contract arguments (dimension mismatch, bad counts, ...)."""


class ParseError(InputError):
    """Malformed infix input; carries the character position of the failure."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class EvaluationDomainError(SepsrError):
    """Oracle was invalid on too large a fraction of the requested points."""


class IndeterminateError(SepsrError):
    """Correlation undefined: an input vector is (numerically) constant."""


class DegenerateTargetError(SepsrError):
    """Target values are constant; R^2-based fitness is undefined."""


class RankDeficiencyError(SepsrError):
    """Recovery regression is singular; carries the offending block."""

    def __init__(self, message: str, block=None):
        super().__init__(message)
        self.block = block


class BlockFitError(SepsrError):
    """A sub-function fit failed (flat slices for every anchor tried)."""


class UnsupportedLayoutError(SepsrError):
    """Dataset rows do not form a full factorial grid."""


class ProtocolError(SepsrError):
    """External oracle child violated the line protocol."""
