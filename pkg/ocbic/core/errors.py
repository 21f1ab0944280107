class OcBicError(Exception):
    """Base class for every error raised by ocbic."""


class ValidationError(OcBicError):
    """The input is malformed or inconsistent (CLI exit code 2)."""


class NumericalError(OcBicError):
    """The computation itself failed (CLI exit code 3)."""


class ConstraintSyntaxError(ValidationError):
    def __init__(self, message: str, text: str, position: int) -> None:
        super().__init__(f'{message} at position {position} in "{text}"')
        self.text = text
        self.position = position


class RankDeficiencyError(ValidationError):
    def __init__(self, message: str, indices: list[int]) -> None:
        super().__init__(message)
        self.indices = indices


class NotPositiveDefiniteError(NumericalError):
    pass


class ConvergenceError(NumericalError):
    pass


class SeparationError(NumericalError):
    pass


class OverlapError(NumericalError):
    pass


class AcceptanceError(NumericalError):
    pass


class UnderflowWarning(UserWarning):
    pass
