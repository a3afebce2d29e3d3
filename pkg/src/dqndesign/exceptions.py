class ConfigError(ValueError):
    """Invalid or missing configuration; ``key`` names the offending entry."""

    def __init__(self, message, key=None):
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key


class InfeasibleDecisionError(ValueError):
    """A decision violates the capacity budget."""


class DivergenceError(FloatingPointError):
    """Training loss became non-finite or exploded."""

    def __init__(self, message, checkpoint_path=None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path
