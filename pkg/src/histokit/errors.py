"""Exception types shared across the toolkit."""


class HistokitError(Exception):
    """Base class for all toolkit errors."""


class DataFormatError(HistokitError):
    """Malformed or invalid input file (bad header, bad value, bad row)."""


class AlignmentError(HistokitError):
    """Embeddings and manifest rows do not line up."""


class TreeError(HistokitError):
    """Invalid annotation-tree operation (unknown node, labeling conflict)."""


class CohortError(HistokitError):
    """Patient-level aggregation or split construction failed."""


class MetricError(HistokitError):
    """An evaluation metric is undefined for the given input."""


class ConvergenceError(HistokitError):
    """Model fitting diverged or stopped before reaching tolerance."""

    def __init__(self, message, *, iterations=None, subgradient_norm=None):
        super().__init__(message)
        self.iterations = iterations
        self.subgradient_norm = subgradient_norm
