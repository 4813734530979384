"""Exception hierarchy."""


class FedcastError(Exception):
    """Base class for all errors raised by fedcast."""


class InvalidTensorError(FedcastError, ValueError):
    """A tensor has a bad shape or non-finite values."""


class CongruenceError(FedcastError, ValueError):
    """Two parameter sets (or tensors) do not share names and shapes."""


class NormalizationError(FedcastError, ValueError):
    """Aggregation weights are negative or do not sum to one."""


class ConfigError(FedcastError, ValueError):
    """Invalid or unknown configuration values."""


class SelectionError(FedcastError, ValueError):
    """A selection strategy received inconsistent inputs."""


class FormatError(FedcastError, ValueError):
    """A serialized file or frame could not be decoded."""
