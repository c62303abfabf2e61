"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration: bad shapes, unknown keys, out-of-range values."""


class GraphError(RuntimeError):
    """Misuse of the autodiff graph (backward on detached or consumed graphs)."""


class TrainingError(RuntimeError):
    """Non-finite losses or gradients encountered during optimization."""


class DataError(RuntimeError):
    """Demonstration generation or dataset file problems."""
