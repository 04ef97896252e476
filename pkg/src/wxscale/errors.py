"""Exception hierarchy.

Everything raised on bad input derives from :class:`ValidationError`
(CLI exit code 2); everything raised because a fit lacks data derives from
:class:`InsufficientData` (CLI exit code 3).
"""


class WxScaleError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ValidationError(WxScaleError, ValueError):
    exit_code = 2


class InsufficientData(WxScaleError):
    exit_code = 3


# cost models
class UnknownArchitecture(ValidationError):
    pass


class InvalidShape(ValidationError):
    pass


class InvalidConfig(ValidationError):
    pass


class UnknownShape(ValidationError):
    pass


class InvalidInput(ValidationError):
    pass


# metrics
class InvalidGrid(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class NonFiniteInput(ValidationError):
    pass


class UnknownVariable(ValidationError):
    pass


class EmptyEnsemble(ValidationError):
    pass


# run logs
class ParseError(ValidationError):
    def __init__(self, line: int, message: str, field: str | None = None):
        self.line = line
        self.field = field
        where = f"line {line}" + (f", field {field!r}" if field else "")
        super().__init__(f"{where}: {message}")


class MonotonicityViolation(ValidationError):
    def __init__(self, run_id: str, step: int, line: int | None = None):
        self.run_id = run_id
        self.step = step
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(
            f"{where}samples_seen decreases in run {run_id!r} at step {step}"
        )


# fitting
class TooFewPoints(InsufficientData):
    pass


class DegenerateX(InsufficientData):
    pass


class UnregisteredLaw(ValidationError):
    pass


class NoValidMinima(InsufficientData):
    """No IsoFLOP curve had an interior minimum.

    The partially filled frontier (curves with their shape flags, no
    exponents) is attached so callers can still report it.
    """

    def __init__(self, frontier):
        self.frontier = frontier
        flags = ", ".join(c.shape_flag for c in frontier.curves)
        super().__init__(f"no IsoFLOP curve has an interior minimum ({flags})")
