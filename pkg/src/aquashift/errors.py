"""Exception types shared across the package."""


class AquashiftError(Exception):
    """Base class for all package errors."""


class ShapeError(AquashiftError, ValueError):
    """Tensor shapes do not satisfy an operation's requirements."""


class DecodeError(AquashiftError):
    """An image byte stream could not be decoded."""


class UnsupportedFormatError(DecodeError):
    """The image decoded, but its container or color space is not supported."""


class CheckpointFormatError(AquashiftError):
    """A checkpoint file is truncated or has a bad magic/version."""


class IncompatibleCheckpointError(CheckpointFormatError):
    """A well-formed checkpoint whose layer shapes do not match the network plan."""


class ContractError(AquashiftError):
    """Arguments violate a cross-call contract (e.g. a foreign activation cache)."""


class DatasetError(AquashiftError):
    """No usable training or evaluation pairs."""
