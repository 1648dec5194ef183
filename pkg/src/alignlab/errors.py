"""Exception hierarchy shared across the package."""


class AlignlabError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(AlignlabError, ValueError):
    """Array shapes do not chain or do not match a contract."""


class NumericError(AlignlabError, ArithmeticError):
    """A value that must be finite is NaN or infinite."""


class DegenerateWeightError(AlignlabError, ValueError):
    """A classifier column has zero norm and cannot be normalized."""


class DegenerateEmbeddingError(AlignlabError, ValueError):
    """An embedding row has zero norm, so its direction is undefined."""


class ContractViolationError(AlignlabError, ValueError):
    """A precondition on the inputs (e.g. unit-norm columns) is violated."""


class EmptyClassError(AlignlabError, ValueError):
    """A class roster entry has no examples."""


class EmptyRelatedSetError(AlignlabError, ValueError):
    """A centroid was requested for a class with no related examples."""


class EmptyBatchError(AlignlabError, ValueError):
    """A loss was evaluated on an empty batch."""


class MappingError(AlignlabError, KeyError):
    """A class id has no entry in the base-to-novel label map."""


class InsufficientBaseClassesError(AlignlabError, ValueError):
    """Disjoint selection needs more base classes than exist."""


class SamplingError(AlignlabError, ValueError):
    """A split cannot support the requested episode geometry."""


class SyntheticSpecError(AlignlabError, ValueError):
    """Synthetic dataset parameters are infeasible."""


class ConfigError(AlignlabError, ValueError):
    """A run-config file failed to parse or validate."""


class DivergenceError(AlignlabError, ArithmeticError):
    """Training produced a non-finite loss.

    Carries the stage name and the epoch/iteration index at which the
    loss left the finite range.
    """

    def __init__(self, stage: str, index: int):
        super().__init__(f"non-finite loss in {stage} at step {index}")
        self.stage = stage
        self.index = index
