"""
Exception hierarchy for open_krotov.

Every error raised by the library derives from `OpenKrotovError`, so the CLI
can translate any failure into one of its documented exit codes.
"""

from __future__ import annotations

from typing import Final

EXIT_OK: Final[int] = 0
EXIT_CONFIG_PARSE: Final[int] = 2
EXIT_VALIDATION: Final[int] = 3
EXIT_RUNTIME: Final[int] = 4


class OpenKrotovError(Exception):
    """
    Base class for all library errors.

    Args:
        message: Human readable description.
        original_error: Lower-level exception that triggered this one, if any.
    """

    def __init__(self, message: str, original_error: Exception | None = None) -> None:
        super().__init__(message)
        self.original_error = original_error


class DimensionMismatchError(OpenKrotovError, ValueError):
    """Operands do not share the Hilbert or Liouville space dimension."""


class GridMismatchError(DimensionMismatchError):
    """A sampled field or trajectory does not live on the expected time grid."""


class NonHermitianError(OpenKrotovError, ValueError):
    """An operator required to be Hermitian is not, within tolerance."""


class InvalidStateError(OpenKrotovError, ValueError):
    """
    A density matrix or ket violates its invariants.

    Typically raised by:
        - DensityMatrix(...) for non-unit trace or negative eigenvalues
        - normalized_ket(...) for a zero vector
    """


class ParameterRangeError(OpenKrotovError, ValueError):
    """
    A numeric parameter lies outside its admissible range.

    Example:
        >>> raise ParameterRangeError('delta=3.0 outside admissible range [0, 2]')
        Traceback (most recent call last):
        ...
        open_krotov.errors.ParameterRangeError: delta=3.0 outside admissible range [0, 2]
    """


class TargetMismatchError(OpenKrotovError, ValueError):
    """The requested target is not the fixed point of the uncontrolled dynamics."""


class ConfigParseError(OpenKrotovError):
    """The experiment configuration could not be read or is not valid JSON."""


class ConfigValidationError(OpenKrotovError, ValueError):
    """The experiment configuration parsed but failed validation."""


class MonotonicityError(OpenKrotovError, RuntimeError):
    """
    The cost functional decreased beyond roundoff between two iterations.

    This signals a sign-convention or discretization fault, not a user error.

    Args:
        k: Iteration index at which the decrease was observed.
        j_prev: Cost of iteration k - 1.
        j_new: Cost of iteration k.
    """

    def __init__(self, k: int, j_prev: float, j_new: float) -> None:
        super().__init__(
            f'Cost decreased at iteration {k}: J={j_new:.17g} < previous {j_prev:.17g} '
            f'(delta_J={j_new - j_prev:.3e}); check field_update_sign and the time step',
        )
        self.k = k
        self.j_prev = j_prev
        self.j_new = j_new


class InternalConsistencyError(OpenKrotovError, RuntimeError):
    """A quantity that the mathematics guarantees was found violated."""


def exit_code_for(error: BaseException) -> int:
    """
    Map an exception to the CLI exit code.

    Args:
        error: Exception caught by the front end.

    Returns:
        2 for unreadable configs, 3 for validation failures, 4 for runtime aborts.
    """
    match error:
        case ConfigParseError():
            return EXIT_CONFIG_PARSE
        case (
            ConfigValidationError()
            | ParameterRangeError()
            | TargetMismatchError()
            | DimensionMismatchError()
            | NonHermitianError()
            | InvalidStateError()
        ):
            return EXIT_VALIDATION
        case _:
            return EXIT_RUNTIME
