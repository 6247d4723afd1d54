"""Exception hierarchy. Everything derives from :class:`CodeAlignError`."""


class CodeAlignError(Exception):
    pass


class ConfigError(CodeAlignError, ValueError):
    """Invalid configuration value, dimension request or unknown key."""


class DimensionError(CodeAlignError, ValueError):
    pass


class InputError(CodeAlignError, ValueError):
    """Empty, non-finite or otherwise unusable input data."""


class LabelError(CodeAlignError, ValueError):
    pass


class ProtocolError(CodeAlignError, ValueError):
    """Evaluation protocol cannot be satisfied by the data."""


class MetricError(CodeAlignError, ValueError):
    pass


class DegenerateCodebookError(CodeAlignError, ValueError):
    pass


class CompatibilityError(CodeAlignError, ValueError):
    """Backbone and codebook (or model and data) do not fit together."""


class NumericError(CodeAlignError, ArithmeticError):
    pass


class TrainingError(NumericError):
    """Training diverged; ``last_finite_epoch`` is -1 if no epoch finished."""

    def __init__(self, message, last_finite_epoch=-1):
        super().__init__(message)
        self.last_finite_epoch = last_finite_epoch


class OracleError(CodeAlignError, RuntimeError):
    """A gradient oracle was handed a non-deterministic evaluator."""
