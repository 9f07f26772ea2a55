"""Exception types shared across the package.

Two families matter to callers: input problems (bad files, mismatched shapes)
and domain problems (parameters outside the physics' validity range). The CLI
maps the first to exit code 2 and the second to exit code 3.
"""


class HazeError(Exception):
    """Base class for all package errors."""


class InputError(HazeError, ValueError):
    """Malformed or inconsistent input."""


class ShapeError(InputError):
    pass


class IngestionError(InputError):
    """Files on disk could not be paired or read."""

    def __init__(self, message, offenders=()):
        super().__init__(message)
        self.offenders = list(offenders)


class DomainError(HazeError, ValueError):
    """A value lies outside the domain where the model is defined."""


class LowTransmissionError(DomainError):
    pass


class DegenerateDecompositionError(DomainError):
    """Hazy and clear inputs carry no attenuation signal to decompose."""


class NoValidPixelsError(DomainError):
    pass


class SingularFitError(DomainError):
    pass
