"""Exception types shared across the package."""


class BpbError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(BpbError):
    """Invalid experiment configuration. Carries a list of field-level messages."""

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class OracleInputError(BpbError, ValueError):
    """Bad input to a set-function oracle (out-of-range id, duplicate item, ...)."""


class GroundSetTooLargeError(BpbError):
    """Exhaustive enumeration requested above the supported ground-set size."""


class SearchSpaceTooLargeError(BpbError):
    """Brute-force search space exceeds the configured cap."""


class NumericalError(BpbError):
    """A linear solve stayed singular after jitter, or a variance went badly negative."""


class InfeasibleBaselineError(BpbError):
    """Exact regret baseline requested but brute force is out of reach."""


class FeedbackError(BpbError, ValueError):
    """Illegal interaction with the bandit environment."""
