"""Exception hierarchy shared by every module."""


class WtaError(Exception):
    pass


class ParameterError(WtaError, ValueError):
    pass


class FormatError(WtaError, ValueError):
    """Malformed spike or snapshot file. Carries the offending line when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SimulationError(WtaError, RuntimeError):
    pass


class IntegrityError(WtaError):
    pass


class CalibrationError(WtaError):
    pass
