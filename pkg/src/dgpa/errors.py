"""Exception types shared across the toolkit."""


class ContractViolation(ValueError):
    """An operation was called with arguments that break its preconditions."""


class ConfigError(ValueError):
    """Config file could not be parsed or contains unknown/invalid keys."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DataFormatError(ValueError):
    """A dataset file does not match its documented CSV schema."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class CheckpointError(ValueError):
    """A checkpoint file is truncated, mislabeled, or inconsistent."""


class FactorizationError(RuntimeError):
    """A symmetric positive-definite factorization failed."""


class StochasticForwardError(RuntimeError):
    """Gradient checking refused because the forward pass is not deterministic."""
