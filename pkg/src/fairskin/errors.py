"""Exception hierarchy shared across the package."""


class FairskinError(Exception):
    """Base class for all package errors."""


class PreconditionError(FairskinError):
    """An input violates a documented precondition."""


class NumericError(FairskinError):
    """A numeric routine failed (non-convergence, non-finite values)."""


class NotPSDError(PreconditionError):
    """A matrix required to be positive semi-definite is not."""


class InsufficientDataError(PreconditionError):
    """Too few samples to compute the requested statistic."""


class EmptyCorpusError(PreconditionError):
    """An operation received a corpus with zero samples."""


class MissingWeightError(PreconditionError):
    """A sample's class has no entry in the weight table."""


class MissingGroupError(PreconditionError):
    """A required demographic group is absent from the data."""


class IngestionError(FairskinError):
    """One or more manifest rows could not be ingested.

    ``rows`` holds ``(row_number, message)`` pairs, 1-based and counting
    the header as row 1.
    """

    def __init__(self, rows):
        self.rows = list(rows)
        lines = ", ".join(f"row {n}: {msg}" for n, msg in self.rows)
        super().__init__(f"ingestion failed for {len(self.rows)} row(s): {lines}")


class DivergenceError(NumericError):
    """Training produced a non-finite loss or gradient.

    ``step`` is the step at which divergence was detected and
    ``last_good_theta`` the parameter vector before the failed update.
    """

    def __init__(self, step, last_good_theta=None):
        self.step = step
        self.last_good_theta = last_good_theta
        super().__init__(f"non-finite loss or gradient at step {step}")


class CheckpointError(FairskinError):
    """A checkpoint file is malformed or does not match the expected config."""


class ConfigError(FairskinError):
    """An experiment configuration is malformed or inconsistent."""


class StageError(FairskinError):
    """A pipeline stage failed; partial artifacts are kept on disk.

    ``stage`` names the failed stage; the original exception is chained.
    """

    def __init__(self, stage, cause):
        self.stage = stage
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.__cause__ = cause


class IncompatibleRunsError(FairskinError):
    """Run records with mismatched metric options cannot be compared."""
