"""Exception types shared across the pipeline."""


class StageError(RuntimeError):
    """A pipeline stage could not produce a valid result from its input."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""
