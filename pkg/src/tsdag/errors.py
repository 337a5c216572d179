"""Exception types shared across the package.

The CLI maps these onto exit codes: usage problems exit 1, data problems
exit 2 and numeric failures exit 3.
"""


class ParseError(ValueError):
    """Malformed input file. Carries a human-readable location."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CycleError(ValueError):
    """A directed cycle was found where a DAG is required."""

    def __init__(self, message, nodes=()):
        super().__init__(message)
        self.nodes = tuple(nodes)


class NumericError(ArithmeticError):
    """Non-finite value produced during evaluation. `context` names where."""

    def __init__(self, message, context=None):
        super().__init__(message)
        self.context = context


class DivergedSeriesError(NumericError):
    """Simulation left the numerically stable range."""


class UndefinedMetricError(ValueError):
    """Metric is not defined for the given inputs (e.g. single-class AUROC)."""
