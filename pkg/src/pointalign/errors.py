"""Exception types shared across the library.

Exit-code mapping used by the CLI: input/validation problems exit with 2,
numerical failures (non-convergence, singular systems) exit with 3.
"""


class PointalignError(Exception):
    """Base class for all library errors."""

    exit_code = 2


class InputError(PointalignError, ValueError):
    """Invalid argument values, shapes, or empty valid sets."""

    exit_code = 2


class DegenerateGeometryError(PointalignError):
    """The input geometry does not determine a solution (singular system)."""

    exit_code = 3


class ConvergenceError(PointalignError):
    """Iterative solver exhausted its budget. Carries the last iterate."""

    exit_code = 3

    def __init__(self, message, last_focal=None, last_shift=None, iterations=None):
        super().__init__(message)
        self.last_focal = last_focal
        self.last_shift = last_shift
        self.iterations = iterations


class PmapFormatError(PointalignError):
    """Malformed PMAP file. `code` is one of the documented format errors."""

    exit_code = 2

    def __init__(self, code, message):
        super().__init__(message)
        self.code = code
