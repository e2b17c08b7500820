"""Exception hierarchy shared across the package.

Each class carries a short ``category`` string which the command-line entry
point prints on failure so scripts can dispatch on it.
"""


class SplatSRError(Exception):
    category = "error"


class ParameterError(SplatSRError, ValueError):
    """An argument is outside its admissible range."""

    category = "parameter"

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class ShapeError(SplatSRError, ValueError):
    category = "shape"


class ScheduleError(SplatSRError, ValueError):
    category = "schedule"


class ConfigurationError(SplatSRError):
    category = "configuration"


class DataError(SplatSRError):
    category = "data"


class ParseError(DataError):
    category = "parse"


class DivergenceError(SplatSRError, FloatingPointError):
    """Raised when an optimisation produces a non-finite loss.

    ``state`` holds a small diagnostic dump (iteration, last losses, parameter
    norms) taken right before aborting.
    """

    category = "divergence"

    def __init__(self, message: str, state: dict | None = None):
        self.state = state or {}
        super().__init__(message)
