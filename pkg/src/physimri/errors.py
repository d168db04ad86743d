"""Exception hierarchy shared by all physimri modules."""


class PhysimriError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(PhysimriError, ValueError):
    """Invalid argument, field value, or file content."""


class GridMismatchError(ValidationError):
    """Two fields that must share a voxel grid do not."""


class SequenceChannelError(ValidationError):
    """A sequence was requested that needs a channel the map does not carry."""


class NiftiFormatError(ValidationError):
    """File is not a NIfTI-1 file this package can read."""
