"""Deep Q-learning for multi-stage capacity-expansion design under uncertainty."""
from .env import CapacityExpansionEnv, EnvParams, EnvState, StepOutcome
from .exceptions import ConfigError, DivergenceError, InfeasibleDecisionError

__version__ = "0.1.0"

__all__ = [
    "CapacityExpansionEnv",
    "EnvParams",
    "EnvState",
    "StepOutcome",
    "ConfigError",
    "DivergenceError",
    "InfeasibleDecisionError",
    "__version__",
]
