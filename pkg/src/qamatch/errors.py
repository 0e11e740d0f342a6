"""Exception types shared across the package.

The CLI maps these onto distinct process exit codes, so the split between
configuration problems, malformed data, and runtime divergence is part of
the public contract.
"""


class QAMatchError(Exception):
    """Base class for every package-specific error."""


class ParameterError(QAMatchError, ValueError):
    """A hyperparameter or argument is outside its legal range."""


class ShapeError(QAMatchError, ValueError):
    """An input vector or matrix has an inconsistent dimension."""


class DataFormatError(QAMatchError, ValueError):
    """A dataset, model, or report file failed validation."""


class UndefinedMetricError(QAMatchError, ValueError):
    """A metric was requested on input where it has no value."""


class DivergenceError(QAMatchError, RuntimeError):
    """Training produced a non-finite quantity.

    ``snapshot`` holds whatever diagnostic state was available at the point
    of failure (iteration, loss components, mixing draws, ...).
    """

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = dict(snapshot) if snapshot else {}
