"""Exception types shared across the package."""


class FlareError(Exception):
    """Base class for all errors raised by this package."""


class ContractError(FlareError, ValueError):
    """A function precondition was violated by the caller."""


class ConfigError(FlareError, ValueError):
    """Invalid configuration; the message names the violated constraint."""


class NumericError(FlareError, ArithmeticError):
    """A non-finite value appeared where finite arithmetic was required."""


class DeploymentError(FlareError):
    """A model blob could not be decoded or installed."""


class NoDeployedModelError(FlareError):
    """A sensor was asked to run inference before any model was installed."""


class IdxFormatError(FlareError, ValueError):
    """An IDX file failed to parse; the message carries the byte offset."""


class NormalizationError(FlareError):
    """Accuracy normalization is undefined (zero baseline accuracy)."""
