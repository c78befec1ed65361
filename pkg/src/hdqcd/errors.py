"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: usage errors exit 2, data or parse
errors exit 3, numerical failures exit 4.
"""


class HdqcdError(Exception):
    """Base class for all package errors."""


class InvalidInputError(HdqcdError, ValueError):
    """Input violates an operation's contract."""


class DomainError(InvalidInputError):
    """Argument outside the mathematical domain of an operation."""


class SymmetryViolationError(InvalidInputError):
    """Matrix expected to be symmetric is not, beyond tolerance."""


class DimensionMismatchError(InvalidInputError):
    """Operands have incompatible shapes."""


class InvalidRuleError(InvalidInputError):
    """Shrinkage rule is malformed or produced a nonpositive eigenvalue."""


class DegenerateWindowError(InvalidInputError):
    """Data window carries no usable variation (e.g. all columns equal)."""


class InvalidPairingError(InvalidInputError):
    """Two run summaries do not come from a matching configuration."""


class InsufficientWarmupError(InvalidInputError):
    """Stream ended before the detector's warm-up window was filled."""


class ExhaustedStreamError(HdqcdError):
    """Stream ended before the detector stopped or reached its cap."""


class StreamParseError(HdqcdError):
    """Malformed stream file (bad header, ragged row, short payload)."""


class NumericalGuardError(HdqcdError, ArithmeticError):
    """A numerical guard tripped and no safe clamped value exists."""


class SingularEstimateError(NumericalGuardError):
    """Covariance estimate is singular where an invertible one is required."""


class DetectabilityLossError(NumericalGuardError):
    """Estimation divergence meets or exceeds the post-change divergence."""


class UsageError(HdqcdError):
    """Command line invocation error."""


class ShrinkageGuardWarning(RuntimeWarning):
    """A shrinkage denominator was clamped to its numerical floor."""
