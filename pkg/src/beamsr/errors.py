"""Exception hierarchy shared by all modules.

The CLI maps ``DataError`` to exit code 2 and ``NumericalDivergence`` to 3.
"""


class BeamSRError(Exception):
    pass


class DataError(BeamSRError, ValueError):
    """Malformed, inconsistent or out-of-contract input data."""


class GeometryError(DataError):
    """Image geometry does not fit the sampling scheme."""


class SchemeMismatch(DataError):
    """A model trained for one sampling scheme was asked to serve another."""


class FormatError(DataError):
    """A file on disk does not follow its declared format."""


class NumericalDivergence(BeamSRError, ArithmeticError):
    """Non-finite values appeared in activations or the loss."""
