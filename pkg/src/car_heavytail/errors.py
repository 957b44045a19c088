"""Exception and warning types shared across the package."""


class CarError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(CarError, ValueError):
    """Bad input data or configuration (CLI exit code 2)."""


class EstimationError(CarError, RuntimeError):
    """A well-formed request that could not be computed (CLI exit code 3)."""


class NotApplicableError(EstimationError):
    """Inference requested under a design for which it has no justification."""


class DesignWarning(UserWarning):
    pass


class ScoreWarning(UserWarning):
    pass
