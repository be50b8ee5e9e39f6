"""Exception types shared across the package."""


class InputDomainError(ValueError):
    """Input is outside the domain of an operation (non-finite, wrong shape, ...)."""


class PartitionError(ValueError):
    """A class partition is malformed (empty class, out-of-range index)."""


class NumericError(ArithmeticError):
    """A factorization or numeric routine failed."""


class FormatError(ValueError):
    """A file does not follow the expected on-disk layout."""


class ConsistencyError(ValueError):
    """Two inputs that must agree (e.g. image and label counts) do not."""


class TrainingDivergedError(RuntimeError):
    """Loss became NaN/inf during training."""


class ConfigError(ValueError):
    """An experiment configuration failed validation.

    ``field`` names the offending dotted config key.
    """

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
