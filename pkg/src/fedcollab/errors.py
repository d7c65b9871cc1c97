"""Exception types shared across the package."""


class FedCollabError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(FedCollabError, ValueError):
    """Array or model shapes do not line up."""


class InputError(FedCollabError, ValueError):
    """An argument is outside the operation's domain."""


class UsageError(FedCollabError, RuntimeError):
    """An API was called in the wrong order or with stale state."""


class RangeError(FedCollabError, OverflowError):
    """A value does not fit the fixed-point ring encoding."""


class FormatError(FedCollabError, ValueError):
    """A binary file does not follow the IDX layout."""


class ConfigError(FedCollabError, ValueError):
    """An experiment configuration is invalid."""
