"""Exception types shared across the package, mapped to CLI exit codes."""


class ConfigurationError(ValueError):
    """Invalid configuration, layer wiring, or argument. CLI exit code 2."""


class DataError(ValueError):
    """Malformed or inconsistent input data / file format. CLI exit code 3."""


class DivergenceError(RuntimeError):
    """Non-finite value encountered during training or inference. CLI exit code 4."""


class EnsembleStartupError(RuntimeError):
    """Bias-corrected targets requested for a row that has never been updated.

    Training loops must keep the unsupervised weight at zero until every row
    they query has at least one accumulated prediction.
    """
