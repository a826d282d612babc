"""Exception types raised across the package."""


class AugmemError(Exception):
    """Base class for all package errors."""


class ShapeError(AugmemError, ValueError):
    pass


class ConfigError(AugmemError, ValueError):
    pass


class InsufficientFramesError(AugmemError, ValueError):
    def __init__(self, got, required):
        super().__init__(f"need at least {required} input frames, got {got}")
        self.got = got
        self.required = required


class PreconditionError(AugmemError, ValueError):
    pass


class ContractError(AugmemError, RuntimeError):
    """An operation was called in a state its contract forbids."""


class FormatError(AugmemError, ValueError):
    """Base class for checkpoint and feature-file decoding errors."""


class BadMagicError(FormatError):
    pass


class MalformedHeaderError(FormatError):
    pass


class ShapeMismatchError(FormatError):
    pass


class DimensionMismatchError(FormatError):
    pass


class TruncatedPayloadError(FormatError):
    def __init__(self, message, tensor=None):
        super().__init__(message)
        self.tensor = tensor
