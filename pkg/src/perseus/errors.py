"""Exception hierarchy shared by every module of the package."""


class PerseusError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(PerseusError, ValueError):
    """An argument or input file violates a documented precondition."""


class ParseError(ValidationError):
    """A text input could not be parsed.

    Parameters
    ----------
    path : str
        File being read.
    line : int
        1-based line number of the offending line.
    message : str
        What was wrong with it.
    """

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{self.path}:{line}: {message}")


class DimensionError(ValidationError):
    """Array shapes are inconsistent with each other."""


class SingularityError(PerseusError, ArithmeticError):
    """A matrix that must be inverted is singular or numerically so."""


class PoolExhaustedError(ValidationError):
    """An attack could not find enough candidate pairs for its budget."""

    def __init__(self, requested, achievable):
        self.requested = requested
        self.achievable = achievable
        super().__init__(
            f"candidate pool exhausted: requested {requested} edges, "
            f"only {achievable} achievable"
        )


class TrainingError(PerseusError, RuntimeError):
    """Training diverged (non-finite loss)."""

    def __init__(self, epoch, stage=None):
        self.epoch = epoch
        self.stage = stage
        where = f"epoch {epoch}" if stage is None else f"stage {stage}, epoch {epoch}"
        super().__init__(f"loss became non-finite at {where}")
