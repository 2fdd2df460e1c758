"""Exception hierarchy.

Two families matter to callers: :class:`ValidationError` (bad inputs, the
CLI maps it to exit code 2) and :class:`SolverError` (a numerical step
failed, exit code 3).
"""


class NonlocalSPDEError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(NonlocalSPDEError, ValueError):
    pass


class SolverError(NonlocalSPDEError, RuntimeError):
    pass


class BadGrid(ValidationError):
    pass


class NonPositiveDiffusion(ValidationError):
    pass


class NonPositiveSpectrum(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class BadTime(ValidationError):
    pass


class BadInterval(ValidationError):
    pass


class GridMisaligned(ValidationError):
    pass


class SupportViolation(ValidationError):
    pass


class ThetaViolation(ValidationError):
    pass


class IllPosedWeight(ValidationError):
    pass


class ConditionViolation(ValidationError):
    """Coefficient condition (boundary noise, superparabolicity) not met."""


class UnsupportedNoise(ValidationError):
    pass


class EigensolveFailure(SolverError):
    pass


class DegenerateMultiplier(SolverError):
    pass


class UnstableStep(SolverError):
    pass


class TailTooLarge(UserWarning):
    """The field has a large component outside the retained modes."""
