"""Exception hierarchy shared by the binary readers and the training harness."""


class BorderNetError(Exception):
    pass


class FormatError(BorderNetError, ValueError):
    """A file on disk does not match the expected binary layout."""


class BadMagicError(FormatError):
    pass


class VersionMismatchError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


class DimensionOverflowError(FormatError):
    pass


class CountMismatchError(FormatError):
    pass


class VariantMismatchError(FormatError):
    pass


class ProvenanceError(BorderNetError, ValueError):
    """Raised when an occluded dataset reaches a code path that only accepts clean data."""
