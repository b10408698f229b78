class BemiError(Exception):
    pass


class InvalidArgument(BemiError, ValueError):
    pass


class FormatError(BemiError, ValueError):
    pass


class CapacityError(BemiError):
    pass


class SizeError(BemiError):
    """Raised when an exhaustive enumeration would be too large."""


class SolverError(BemiError):
    pass


class TrainingFailure(BemiError):
    pass


class EnsembleBuildError(TrainingFailure):
    """Some member trainings failed; ``partial`` holds the ensemble of the others."""

    def __init__(self, failed: dict, partial=None):
        self.failed = failed
        self.partial = partial
        names = ", ".join(f"{set(k)}: {v}" for k, v in failed.items())
        super().__init__(f"{len(failed)} member net(s) failed: {names}")
