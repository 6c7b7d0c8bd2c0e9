"""Exception types shared across the package."""


class ContractError(ValueError):
    """An operation was called with inputs violating its preconditions."""


class ParameterError(ValueError):
    """A model or solver parameter is outside its admissible range."""


class SolverDivergenceError(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(f"{message} (achieved relative residual {residual:.3e})")
        self.residual = residual


class IntegrationBlowupError(RuntimeError):
    def __init__(self, t):
        super().__init__(f"non-finite values produced at t = {t!r}")
        self.t = t


class FitInsufficientError(ValueError):
    """Fewer than four usable points remain for a log-log fit."""


class SweepError(RuntimeError):
    def __init__(self, message, rows):
        super().__init__(message)
        self.rows = rows


class ConfigError(ValueError):
    """Configuration failed validation; ``errors`` lists every problem found."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))
