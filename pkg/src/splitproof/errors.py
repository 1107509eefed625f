"""Exception types shared across the toolkit.

Error names follow the operation contracts they guard; module-specific
errors live next to the operations that raise them.
"""


class SplitproofError(Exception):
    """Base class for all toolkit errors."""


class DimMismatch(SplitproofError):
    """Two rasters that must share dimensions do not."""


class ZeroRange(SplitproofError):
    """A field is constant where a nonzero value range is required."""
