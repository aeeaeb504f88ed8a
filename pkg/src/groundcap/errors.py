"""Exception types shared across the package."""


class GroundcapError(Exception):
    """Base class for all package errors."""


class ValidationError(GroundcapError, ValueError):
    """Input violates a documented invariant (non-finite values, bad boxes, ...)."""


class DimensionError(GroundcapError, ValueError):
    """Array shapes are not conformable."""


class ConfigError(GroundcapError, ValueError):
    """Invalid configuration or refused run setup."""


class LoadError(GroundcapError, ValueError):
    """A serialized file could not be decoded."""


class SizeMismatchError(LoadError):
    """Payload length disagrees with the sizes declared in the header."""


class HeaderError(LoadError):
    """Magic bytes, version or header text are malformed."""


class NonFiniteError(LoadError):
    """Decoded payload contains NaN or infinity."""


class StratificationError(GroundcapError, ValueError):
    """A category is too rare to be stratified."""
