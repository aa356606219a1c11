"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes, so estimator/model code should
raise the most specific class that applies.
"""


class DagformerError(Exception):
    """Base class for all package errors."""


class ShapeError(DagformerError):
    """Array dimensions do not match an operation's contract."""


class ContractError(DagformerError):
    """A precondition of an operation was violated."""


class ConfigError(DagformerError):
    """Invalid or incompatible configuration (exit code 2)."""


class DataError(DagformerError):
    """Malformed or out-of-contract input data (exit code 3)."""


class TrainingDivergedError(DagformerError):
    """Loss became non-finite during training (exit code 4)."""

    def __init__(self, message: str, epoch: int | None = None, batch: int | None = None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class SelectionFailedError(DagformerError):
    """Every candidate in a model-selection run diverged (exit code 5)."""

    def __init__(self, message: str, table=None):
        super().__init__(message)
        self.table = table


class DegenerateInputError(ContractError):
    """An input is degenerate (all-masked softmax row, zero-variance reference)."""
