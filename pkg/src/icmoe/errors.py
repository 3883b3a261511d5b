"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(ValueError):
    """A precondition on the arguments was violated."""


class ConfigError(ValueError):
    """A configuration value is missing, malformed or out of range."""


class InvariantError(RuntimeError):
    """A runtime invariant was breached (e.g. a frozen parameter changed)."""


class TrainingError(RuntimeError):
    """Training diverged or produced a non-finite quantity."""
