"""Exception hierarchy shared by all modules."""


class DegenBSSError(Exception):
    """Base class for package errors."""


class UsageError(DegenBSSError, ValueError):
    """Invalid arguments: bad shapes, out-of-range options."""


class DataError(DegenBSSError, ValueError):
    """The data cannot support the requested operation."""


class GenerationError(DegenBSSError, RuntimeError):
    """Synthetic generation failed its own verification."""

    def __init__(self, message, worst_ratio=None):
        super().__init__(message)
        self.worst_ratio = worst_ratio


class ClusteringError(DegenBSSError, RuntimeError):
    """k-means could not produce the requested number of clusters."""


class SelectionError(DegenBSSError, RuntimeError):
    """Not enough angularly distinct candidate columns."""


class SolverError(DegenBSSError, RuntimeError):
    """A linear-algebra step failed (rank deficiency, singular matrix)."""

    def __init__(self, message, condition_number=None):
        super().__init__(message)
        self.condition_number = condition_number


class InfeasibleError(DegenBSSError, RuntimeError):
    """A linear program has no feasible point.

    ``certificate`` is a vector ``y`` with ``A.T @ y >= 0`` and ``y @ b < 0``.
    """

    def __init__(self, message, certificate=None):
        super().__init__(message)
        self.certificate = certificate


class ConvergenceError(DegenBSSError, RuntimeError):
    """Iteration cap reached before the tolerances were met.

    ``result`` carries the best iterate so callers may still use it.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result
