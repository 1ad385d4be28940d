class FormatError(ValueError):
    """A file does not match its declared binary layout."""


class DimensionMismatchError(FormatError):
    """Stored dimensions disagree with the caller's expectations."""


class NumericalError(FloatingPointError):
    """A loss or gradient became non-finite during training."""
