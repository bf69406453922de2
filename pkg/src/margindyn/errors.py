"""Exception types shared across the package.

The CLI maps these onto exit codes: validation/data problems exit 1,
usage problems exit 2 (argparse), numeric failures exit 3.
"""


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class DataError(ValueError):
    """A run record or margin array violates its contract."""


class FormatError(ValueError):
    """A file does not conform to its on-disk format."""


class AnalysisError(ValueError):
    """An analysis was requested on data that cannot support it."""


class EstimationError(ValueError):
    """A norm estimate was requested for an unsupported layer or variant."""


class OracleSizeError(ValueError):
    """Explicit operator materialization exceeds the configured cap."""


class NumericError(ArithmeticError):
    """A numeric computation produced NaN/Inf or diverged."""
