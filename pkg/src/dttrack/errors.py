"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """An input broke an operation's precondition (shape, range, missing key)."""


class DomainError(ArithmeticError):
    """A math primitive was evaluated outside its domain."""


class NumericFault(FloatingPointError):
    """A non-finite value appeared where a finite one is required."""


class PlanValidationError(ValueError):
    """A progressive-scaling plan shrinks a factor or is otherwise malformed."""


class IntegrityError(IOError):
    """A persisted artifact does not match its own index or digest."""


class UndefinedMetric(ValueError):
    """A metric was requested over zero visible frames."""


class ConfigError(ValueError):
    """A run configuration failed to parse or validate."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)
