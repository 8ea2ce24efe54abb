"""Exception taxonomy shared across the package."""


class FussError(Exception):
    """Base class for all package errors."""


class ConfigurationError(FussError):
    """Invalid shapes, dimensions, or experiment configuration."""


class DataError(FussError):
    """Malformed input data (masks, labels, files)."""


class ProtocolError(FussError):
    """Violation of the client/server message contract."""
