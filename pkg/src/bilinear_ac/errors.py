"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand dimensions do not match."""


class NumericsError(ArithmeticError):
    """A value that must be finite is not."""


class ProtocolError(RuntimeError):
    """An operation was called outside its legal state (e.g. stepping a
    finished episode, sampling an undersized buffer)."""


class ContractViolation(RuntimeError):
    """Parameters that must stay frozen were mutated."""


class ConfigError(ValueError):
    """Bad configuration file or override key."""
