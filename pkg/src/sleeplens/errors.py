"""Exception types shared across the package."""


class SleepLensError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(SleepLensError, ValueError):
    """Operands have incompatible shapes; message names both shapes."""


class ContractError(SleepLensError, ValueError):
    """An API precondition was violated by the caller."""


class SchemaError(SleepLensError, ValueError):
    """Data does not match the documented feature schema."""


class RowParseError(SchemaError):
    """A CSV cell could not be parsed; carries the 1-based line number."""

    def __init__(self, message, line_number):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class IntegrityError(SchemaError):
    """Duplicate (subject, timestep) or similar structural inconsistency."""


class AlreadyInTargetClassError(ContractError):
    """Counterfactual request where the prediction already matches the target."""


class ComplexityError(SleepLensError, ValueError):
    """Exact enumeration was requested beyond the supported player count."""


class DegenerateSystemError(SleepLensError, RuntimeError):
    """A regression system was singular; more samples may fix it."""


class UnsupportedArchError(SleepLensError, ValueError):
    """The checkpoint architecture does not support the requested operation."""


class TrainingDivergedError(SleepLensError, RuntimeError):
    """Loss became non-finite; carries the epoch where it happened."""

    def __init__(self, epoch, message="training loss became non-finite"):
        super().__init__(f"{message} at epoch {epoch}")
        self.epoch = epoch
