"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: UsageError -> 1, DataError -> 2,
NumericError (and unexpected runtime failures) -> 3.
"""


class PlantidError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(PlantidError):
    """Invalid invocation: bad flags, refused long runs, malformed arguments."""


class DataError(PlantidError):
    """Corpus, split, checkpoint, or weight-artifact problems."""


class WeightsUnavailableError(DataError):
    """A pretrained weight artifact is neither cached locally nor fetchable."""


class NumericError(PlantidError):
    """Non-finite loss or other numeric breakdown during training."""
