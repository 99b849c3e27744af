class ConfigError(ValueError):
    """Invalid configuration or hyperparameter value."""


class DatasetError(ValueError):
    """Empty, malformed, or mismatched dataset."""


class DivergenceError(FloatingPointError):
    """A training phase produced a non-finite value."""
