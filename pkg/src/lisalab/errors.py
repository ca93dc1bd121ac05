"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration: bad field value, unknown key, unknown preset."""


class ShapeError(ValueError):
    """Operands with incompatible shapes."""


class ContractError(RuntimeError):
    """A caller violated an API precondition (e.g. backward on a non-scalar)."""


class DataError(ValueError):
    """Unusable dataset input (empty file, tokens out of range)."""


class DomainError(ValueError):
    """Numeric argument outside the mathematical domain of an operation."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss; partial logs are preserved."""

    def __init__(self, step, message="non-finite loss"):
        super().__init__(f"{message} at step {step}")
        self.step = step
