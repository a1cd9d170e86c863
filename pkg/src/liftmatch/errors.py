"""Exception types. Each carries the CLI exit code it maps to."""


class LiftMatchError(Exception):
    exit_code = 1


class ParameterError(LiftMatchError, ValueError):
    """Weight or argument shapes do not fit together."""

    exit_code = 2


class DimensionError(LiftMatchError, ValueError):
    exit_code = 2


class FormatError(LiftMatchError, ValueError):
    """Malformed file content (images, depth, weights, reports)."""

    exit_code = 3


class ValidationError(LiftMatchError, ValueError):
    """Well-formed file whose values violate a data invariant."""

    exit_code = 3


class EstimationError(LiftMatchError, RuntimeError):
    exit_code = 4


class TrainingError(LiftMatchError, RuntimeError):
    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration

    exit_code = 4
